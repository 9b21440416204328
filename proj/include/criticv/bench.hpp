#pragma once

#include <atomic>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "criticv/core.hpp"
#include "criticv/jsonl.hpp"
#include "criticv/loop.hpp"
#include "criticv/prompts.hpp"
#include "criticv/util.hpp"

namespace criticv::bench {

using json = nlohmann::json;

struct BenchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BenchItem {
    std::string id;
    enum class Kind { mcq, open } kind = Kind::mcq;
    std::string question;
    std::string hint;
    std::vector<std::string> options;
    std::string image_ref;
    std::string gold;  // option label for mcq, answer text for open
};

inline BenchItem bench_item_from_json(const json& j) {
    core::check_fields(j, {"id", "kind", "question", "image_ref", "gold"}, {"hint", "options"});
    BenchItem it;
    it.id = j.at("id");
    std::string kind = j.at("kind");
    if (kind == "mcq") it.kind = BenchItem::Kind::mcq;
    else if (kind == "open") it.kind = BenchItem::Kind::open;
    else throw BenchError("item " + it.id + ": unknown kind " + kind);
    it.question = j.at("question");
    it.hint = j.value("hint", "");
    if (j.contains("options"))
        for (const auto& o : j.at("options")) it.options.push_back(o.get<std::string>());
    it.image_ref = j.at("image_ref");
    it.gold = j.at("gold");
    if (it.kind == BenchItem::Kind::mcq) {
        if (it.options.empty()) throw BenchError("item " + it.id + ": mcq without options");
        if (it.options.size() > 26) throw BenchError("item " + it.id + ": too many options");
        if (it.gold.size() == 1 && it.gold[0] >= 'a' && it.gold[0] <= 'z')
            it.gold[0] = char(it.gold[0] - 'a' + 'A');
        if (it.gold.size() != 1 || it.gold[0] < 'A' ||
            it.gold[0] >= char('A' + it.options.size()))
            throw BenchError("item " + it.id + ": gold label not among options");
    } else if (it.gold.empty()) {
        throw BenchError("item " + it.id + ": open item with empty gold");
    }
    return it;
}

inline std::vector<BenchItem> load_benchmark(const std::string& path) {
    return jsonl::read_jsonl_as<BenchItem>(path, bench_item_from_json);
}

// Rule cascade, first hit wins: (1) standalone label token from the reply
// start; (2) an "answer is X" pattern; (3) unique option whose full text
// appears (normalized) in the reply.
inline std::optional<char> extract_choice(const std::string& reply,
                                          const std::vector<std::string>& options) {
    auto valid = [&](char c) { return c >= 'A' && c < char('A' + options.size()); };

    static const std::regex label_tok(R"(^[\(\[]?([A-Z])[\)\].:]?$)");
    std::istringstream in(reply);
    std::string tok;
    while (in >> tok) {
        std::smatch m;
        if (std::regex_match(tok, m, label_tok)) {
            char c = m[1].str()[0];
            if (valid(c)) return c;
        }
    }

    static const std::regex answer_is(R"([Aa]nswer\s+is\s*:?\s*[\(\[]?([A-Z])\b)");
    std::smatch m;
    if (std::regex_search(reply, m, answer_is)) {
        char c = m[1].str()[0];
        if (valid(c)) return c;
    }

    std::string norm_reply = core::normalize_detail(reply).normalized;
    std::optional<char> hit;
    for (std::size_t i = 0; i < options.size(); ++i) {
        std::string norm_opt = core::normalize_detail(options[i]).normalized;
        if (norm_opt.empty()) continue;
        if (norm_reply.find(norm_opt) != std::string::npos) {
            if (hit) return std::nullopt;  // ambiguous
            hit = char('A' + i);
        }
    }
    return hit;
}

// Contiguous token-subsequence containment of the normalized gold answer.
inline bool normalized_containment(const std::string& gold, const std::string& reply) {
    auto g = core::normalize_tokens(gold);
    auto r = core::normalize_tokens(reply);
    if (g.empty()) return false;
    if (g.size() > r.size()) return false;
    for (std::size_t i = 0; i + g.size() <= r.size(); ++i) {
        bool all = true;
        for (std::size_t k = 0; k < g.size(); ++k)
            if (r[i + k] != g[k]) {
                all = false;
                break;
            }
        if (all) return true;
    }
    return false;
}

struct Verdict {
    std::string item_id;
    bool correct = false;
    std::string extracted;  // label or empty
};

inline Verdict score_item(const BenchItem& item, const std::string& final_answer) {
    Verdict v;
    v.item_id = item.id;
    if (item.kind == BenchItem::Kind::mcq) {
        auto label = extract_choice(final_answer, item.options);
        if (label) v.extracted = std::string(1, *label);
        v.correct = label && *label == item.gold[0];
    } else {
        v.correct = normalized_containment(item.gold, final_answer);
    }
    return v;
}

struct TokenStats {
    std::optional<double> mean;
    std::optional<double> std_dev;
    std::string method = "whitespace";
};

inline TokenStats token_stats(const std::vector<loop::LoopTranscript>& transcripts) {
    std::vector<double> counts;
    for (const auto& t : transcripts)
        for (const auto& r : t.rounds)
            if (r.critique_text) counts.push_back(double(whitespace_token_count(*r.critique_text)));
    TokenStats s;
    if (counts.empty()) return s;
    s.mean = population_mean(counts);
    s.std_dev = population_std(counts);
    return s;
}

enum class EvalMode { baseline, special_prompt_only, self_refine, critic_v };

inline EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "baseline") return EvalMode::baseline;
    if (s == "special_prompt_only") return EvalMode::special_prompt_only;
    if (s == "self_refine") return EvalMode::self_refine;
    if (s == "critic_v") return EvalMode::critic_v;
    throw BenchError("unknown eval mode: " + s);
}

inline std::string to_string(EvalMode m) {
    switch (m) {
        case EvalMode::baseline: return "baseline";
        case EvalMode::special_prompt_only: return "special_prompt_only";
        case EvalMode::self_refine: return "self_refine";
        case EvalMode::critic_v: return "critic_v";
    }
    return "baseline";
}

struct EvalConfig {
    std::string benchmark_name = "benchmark";
    EvalMode mode = EvalMode::baseline;
    std::string reasoner_id;
    std::string critic_id;  // required for critic_v
    int max_iterations = 1;
    bool strict = false;  // strict: failed items leave the accuracy denominator
    int parallel = 4;
    std::uint64_t seed = 0;
    loop::LoopConfig loop_template;
};

struct EvalReport {
    std::string benchmark_name;
    int n_items = 0;
    int n_scored = 0;
    int n_correct = 0;
    double accuracy = 0.0;
    std::vector<Verdict> verdicts;
    TokenStats critique_tokens;
    std::vector<loop::LoopTranscript> transcripts;
};

inline json to_json(const EvalReport& r, EvalMode mode, std::uint64_t seed) {
    json verdicts = json::array();
    for (const auto& v : r.verdicts)
        verdicts.push_back(json{{"id", v.item_id}, {"correct", v.correct},
                                {"extracted", v.extracted}});
    json tok{{"mean", r.critique_tokens.mean ? json(*r.critique_tokens.mean) : json()},
             {"std", r.critique_tokens.std_dev ? json(*r.critique_tokens.std_dev) : json()},
             {"method", r.critique_tokens.method}};
    return json{{"benchmark", r.benchmark_name}, {"mode", to_string(mode)},
                {"n_items", r.n_items},         {"n_scored", r.n_scored},
                {"accuracy", r.accuracy},       {"verdicts", verdicts},
                {"critique_token_stats", tok},  {"seed", seed}};
}

inline loop::LoopConfig wire_loop(const EvalConfig& cfg) {
    loop::LoopConfig lc = cfg.loop_template;
    lc.reasoner_id = cfg.reasoner_id;
    switch (cfg.mode) {
        case EvalMode::baseline:
            lc.critic_id.reset();
            lc.max_iterations = 0;
            break;
        case EvalMode::special_prompt_only:
            lc.critic_id.reset();
            lc.max_iterations = cfg.max_iterations;
            break;
        case EvalMode::self_refine:
            lc.critic_id = cfg.reasoner_id;
            lc.max_iterations = cfg.max_iterations;
            break;
        case EvalMode::critic_v:
            if (cfg.critic_id.empty()) throw BenchError("critic_v mode requires a critic endpoint");
            lc.critic_id = cfg.critic_id;
            lc.max_iterations = cfg.max_iterations;
            break;
    }
    return lc;
}

inline std::string item_prompt(const BenchItem& item) {
    return item.kind == BenchItem::Kind::mcq
               ? prompts::render_mcq_prompt(item.hint, item.question, item.options)
               : prompts::render_vqa_prompt(item.question);
}

inline EvalReport evaluate(gw::Gateway& gateway, const std::vector<BenchItem>& items,
                           const EvalConfig& cfg) {
    loop::LoopConfig lc = wire_loop(cfg);

    EvalReport report;
    report.benchmark_name = cfg.benchmark_name;
    report.n_items = int(items.size());
    report.transcripts.resize(items.size());
    report.verdicts.resize(items.size());
    std::vector<char> failed(items.size(), 0);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
            const BenchItem& item = items[i];
            loop::LoopTranscript t =
                loop::run_loop(gateway, lc, item.id, item.question, item_prompt(item),
                               item.image_ref);
            bool transport_failed =
                !t.rounds.empty() && t.rounds.back().stop_reason &&
                *t.rounds.back().stop_reason == "transport_error";
            report.transcripts[i] = std::move(t);
            report.verdicts[i] = score_item(item, report.transcripts[i].final_answer);
            if (transport_failed) {
                failed[i] = 1;
                report.verdicts[i].correct = false;
            }
        }
    };
    int n_threads = std::max(1, std::min<int>(cfg.parallel, int(items.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < items.size(); ++i) {
        bool counted = !(cfg.strict && failed[i]);
        if (counted) {
            ++report.n_scored;
            if (report.verdicts[i].correct) ++report.n_correct;
        }
    }
    report.accuracy =
        report.n_scored == 0 ? 0.0 : double(report.n_correct) / double(report.n_scored);
    report.critique_tokens = token_stats(report.transcripts);
    return report;
}

}  // namespace criticv::bench
