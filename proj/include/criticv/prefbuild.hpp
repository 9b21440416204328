#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "criticv/core.hpp"
#include "criticv/util.hpp"

namespace criticv::prefbuild {

using core::PreferencePair;
using core::ScoredCritique;
using json = nlohmann::json;

enum class PairMode { best_worst, all_pairs };

inline PairMode pair_mode_from_string(const std::string& s) {
    if (s == "best_worst") return PairMode::best_worst;
    if (s == "all_pairs") return PairMode::all_pairs;
    throw std::invalid_argument("unknown pair mode: " + s);
}

// Descending by final_score; ties broken by higher jaccard, then lexicographic
// critic_model, then critique text hash. Fully deterministic total order.
inline std::vector<ScoredCritique> rank_critiques(std::vector<ScoredCritique> scored) {
    if (scored.empty()) throw std::invalid_argument("rank_critiques: empty input");
    const std::string& sid = scored.front().critique.sample_id;
    for (const auto& s : scored)
        if (s.critique.sample_id != sid)
            throw std::invalid_argument("rank_critiques: mixed sample_ids (" + sid + " vs " +
                                        s.critique.sample_id + ")");
    std::sort(scored.begin(), scored.end(), [](const ScoredCritique& a, const ScoredCritique& b) {
        if (a.final_score != b.final_score) return a.final_score > b.final_score;
        if (a.jaccard != b.jaccard) return a.jaccard > b.jaccard;
        if (a.critique.critic_model != b.critique.critic_model)
            return a.critique.critic_model < b.critique.critic_model;
        return fnv1a64(a.critique.critique_text) < fnv1a64(b.critique.critique_text);
    });
    return scored;
}

inline std::vector<PreferencePair> build_pairs(const std::string& question,
                                               const std::string& image_ref,
                                               const std::vector<ScoredCritique>& ranked,
                                               double epsilon, PairMode mode) {
    std::vector<PreferencePair> out;
    auto emit = [&](const ScoredCritique& w, const ScoredCritique& l) {
        double margin = w.final_score - l.final_score;
        if (margin < epsilon || margin <= 0) return;
        out.push_back(PreferencePair{question, image_ref, w.critique.critique_text,
                                     l.critique.critique_text, w.final_score, l.final_score,
                                     margin});
    };
    if (ranked.size() < 2) return out;
    if (mode == PairMode::best_worst) {
        emit(ranked.front(), ranked.back());
    } else {
        for (std::size_t i = 0; i < ranked.size(); ++i)
            for (std::size_t j = i + 1; j < ranked.size(); ++j) emit(ranked[i], ranked[j]);
    }
    return out;
}

// Dataset report: pair counts and token-length min/max/avg for question,
// chosen, and rejected texts. Lengths use the whitespace method; averages
// rounded to 2 decimals.
inline json dataset_stats(const std::vector<PreferencePair>& pairs) {
    auto part = [&](auto getter) -> json {
        if (pairs.empty()) return json{{"min", nullptr}, {"max", nullptr}, {"avg", nullptr}};
        int mn = 0, mx = 0;
        double sum = 0;
        bool first = true;
        for (const auto& p : pairs) {
            int len = whitespace_token_count(getter(p));
            if (first || len < mn) mn = len;
            if (first || len > mx) mx = len;
            first = false;
            sum += len;
        }
        double avg = std::round(sum / double(pairs.size()) * 100.0) / 100.0;
        return json{{"min", mn}, {"max", mx}, {"avg", avg}};
    };
    return json{{"count", pairs.size()},
                {"method", "whitespace"},
                {"question", part([](const PreferencePair& p) { return p.question; })},
                {"chosen", part([](const PreferencePair& p) { return p.chosen; })},
                {"rejected", part([](const PreferencePair& p) { return p.rejected; })}};
}

}  // namespace criticv::prefbuild
