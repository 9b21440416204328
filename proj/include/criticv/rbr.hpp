#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "criticv/core.hpp"
#include "criticv/gateway.hpp"
#include "criticv/prompts.hpp"

namespace criticv::rbr {

using core::ErrorDetail;

// One-to-one matches between inserted (G) and detected (C) details.
struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (g_index, c_index)
    int g_size = 0;
    int c_size = 0;
    int intersection = 0;
};

// Token-set Jaccard of two normalized details; the similarity the matcher
// thresholds against tau.
inline double token_set_similarity(const ErrorDetail& a, const ErrorDetail& b) {
    std::set<std::string> sa, sb;
    for (const auto& t : core::normalize_tokens(a.normalized)) sa.insert(t);
    for (const auto& t : core::normalize_tokens(b.normalized)) sb.insert(t);
    if (sa.empty() && sb.empty()) return 1.0;
    int inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    int uni = int(sa.size() + sb.size()) - inter;
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// Greedy maximum matching: repeatedly take the highest-similarity unmatched
// pair with similarity >= tau; ties broken by lower g_index, then lower
// c_index. Deterministic.
inline MatchResult match_details(const std::vector<ErrorDetail>& g,
                                 const std::vector<ErrorDetail>& c, double tau) {
    struct Cand {
        double sim;
        int gi, ci;
    };
    std::vector<Cand> cands;
    for (int gi = 0; gi < int(g.size()); ++gi)
        for (int ci = 0; ci < int(c.size()); ++ci) {
            double s = token_set_similarity(g[gi], c[ci]);
            if (s >= tau) cands.push_back({s, gi, ci});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        if (a.gi != b.gi) return a.gi < b.gi;
        return a.ci < b.ci;
    });
    MatchResult m;
    m.g_size = int(g.size());
    m.c_size = int(c.size());
    std::vector<bool> g_used(g.size(), false), c_used(c.size(), false);
    for (const auto& cand : cands) {
        if (g_used[cand.gi] || c_used[cand.ci]) continue;
        g_used[cand.gi] = c_used[cand.ci] = true;
        m.pairs.emplace_back(cand.gi, cand.ci);
    }
    m.intersection = int(m.pairs.size());
    return m;
}

// J = |G∩C| / (|G| + |C| − |G∩C|)
inline double jaccard(const MatchResult& m) {
    int uni = m.g_size + m.c_size - m.intersection;
    if (uni == 0) return 1.0;  // both sets empty; unreachable in the pipeline
    return double(m.intersection) / double(uni);
}

inline double final_score(double jac, int judge_score, double alpha = 0.1) {
    return jac + alpha * judge_score;
}

struct RubricResult {
    std::vector<std::string> answers;  // verbatim Yes/No lines, in rubric order
    std::string explanation;
    int judge_score = 0;
    bool clamped = false;
    std::string raw_reply;
};

struct ScoringError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parses the judge's reply: Yes/No per criterion, a free-text explanation,
// and the final 0..10 integer. Out-of-range integers are clamped and flagged.
inline RubricResult parse_rubric_reply(const std::string& reply) {
    RubricResult r;
    r.raw_reply = reply;

    static const std::regex yesno(R"(\b(Yes|No)\b)", std::regex::icase);
    for (auto it = std::sregex_iterator(reply.begin(), reply.end(), yesno);
         it != std::sregex_iterator() && r.answers.size() < 4; ++it)
        r.answers.push_back(it->str());

    std::optional<int> score;
    static const std::regex final_re(R"([Ff]inal\s+[Ss]core\s*[:\-]?\s*(-?\d+))");
    std::smatch m;
    if (std::regex_search(reply, m, final_re)) {
        score = std::stoi(m[1]);
    } else {
        // fall back to the last standalone integer in the reply
        static const std::regex num(R"((?:^|[^\w.])(-?\d{1,3})(?:[^\w.]|$))");
        for (auto it = std::sregex_iterator(reply.begin(), reply.end(), num);
             it != std::sregex_iterator(); ++it)
            score = std::stoi((*it)[1]);
    }
    if (!score) throw ScoringError("no final score found in judge reply");
    int s = *score;
    if (s < 0) {
        s = 0;
        r.clamped = true;
    } else if (s > 10) {
        s = 10;
        r.clamped = true;
    }
    r.judge_score = s;
    r.explanation = reply;
    return r;
}

inline RubricResult judge_rubric_score(gw::Gateway& gateway, const std::string& judge_id,
                                       const core::CritiqueRecord& critique,
                                       const core::FakeAnswer& fake, int max_attempts = 3,
                                       const std::string& tmpl = prompts::kRubricTemplate) {
    std::vector<std::string> inserted;
    for (const auto& d : fake.inserted_details) inserted.push_back(d.text);
    std::string prompt =
        prompts::render_rubric_prompt(inserted, fake.text, critique.critique_text, tmpl);
    std::string last_err;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        auto reply = gateway.complete_chat(judge_id, {gw::ChatMessage::user_text(prompt)},
                                           gw::GenParams::judge_defaults());
        try {
            return parse_rubric_reply(reply.text);
        } catch (const ScoringError& e) {
            last_err = e.what();
        }
    }
    throw ScoringError("rubric scoring failed after " + std::to_string(max_attempts) +
                       " attempts: " + last_err);
}

}  // namespace criticv::rbr
