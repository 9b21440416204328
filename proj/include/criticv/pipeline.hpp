#pragma once

#include <atomic>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "criticv/bench.hpp"
#include "criticv/config.hpp"
#include "criticv/core.hpp"
#include "criticv/dpo.hpp"
#include "criticv/gateway.hpp"
#include "criticv/jsonl.hpp"
#include "criticv/prefbuild.hpp"
#include "criticv/rbr.hpp"
#include "criticv/util.hpp"
#include "criticv/vest.hpp"

namespace criticv::pipeline {

using json = nlohmann::json;

struct StageResult {
    int ok = 0;
    int failed = 0;
    int skipped = 0;  // resume hits

    int exit_code() const { return failed > 0 ? 1 : 0; }
};

inline std::string git_revision() {
    FILE* p = ::popen("git rev-parse HEAD 2>/dev/null", "r");
    if (!p) return "unknown";
    char buf[64] = {0};
    std::string rev;
    if (fgets(buf, sizeof buf, p)) rev = trim(buf);
    ::pclose(p);
    return rev.empty() ? "unknown" : rev;
}

inline void write_metadata(const std::string& out_path, const config::Config& cfg,
                           std::uint64_t seed, const std::string& stage,
                           std::int64_t started_ms, const StageResult& result) {
    json meta{{"stage", stage},
              {"seed", seed},
              {"config_hash", config::config_hash(cfg)},
              {"git_revision", git_revision()},
              {"started_at_ms", started_ms},
              {"finished_at_ms", now_ms()},
              {"ok", result.ok},
              {"failed", result.failed},
              {"skipped", result.skipped}};
    std::ofstream f(out_path + ".meta.json");
    f << meta.dump(2) << '\n';
}

inline std::string failed_path(const std::string& out_path) { return out_path + ".failed.jsonl"; }

inline std::set<std::string> existing_keys(const std::string& path, const std::string& field) {
    std::set<std::string> keys;
    std::ifstream probe(path);
    if (!probe) return keys;
    for (const auto& j : jsonl::read_jsonl(path))
        if (j.contains(field)) keys.insert(j.at(field).get<std::string>());
    return keys;
}

inline std::set<std::string> existing_composite_keys(const std::string& path,
                                                     const std::string& f1,
                                                     const std::string& f2) {
    std::set<std::string> keys;
    std::ifstream probe(path);
    if (!probe) return keys;
    for (const auto& j : jsonl::read_jsonl(path))
        if (j.contains(f1) && j.contains(f2))
            keys.insert(j.at(f1).get<std::string>() + "\x1f" + j.at(f2).get<std::string>());
    return keys;
}

// Runs fn(i) over [0, n) on a bounded pool; per-index results land in order.
template <typename Fn>
void parallel_for(std::size_t n, int parallel, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    };
    int n_threads = std::max(1, std::min<int>(parallel, int(n)));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// gen-fake: samples.jsonl -> fake answers + failure records

inline StageResult run_gen_fake(gw::Gateway& gateway, const config::Config& cfg,
                                const std::string& samples_path, const std::string& out_path,
                                std::uint64_t seed, bool resume, int parallel,
                                std::optional<int> fixed_n = std::nullopt) {
    if (!cfg.judge) throw config::ConfigError("gen-fake requires a judge endpoint");
    std::int64_t t0 = now_ms();
    auto samples = jsonl::read_jsonl_as<core::VqaSample>(samples_path, core::vqa_sample_from_json);
    {
        std::set<std::string> ids;
        for (const auto& s : samples)
            if (!ids.insert(s.id).second)
                throw core::SchemaError("duplicate sample id: " + s.id);
    }
    std::set<std::string> done;
    if (resume) {
        done = existing_keys(out_path, "sample_id");
        for (const auto& k : existing_keys(failed_path(out_path), "sample_id")) done.insert(k);
    }

    StageResult result;
    std::vector<std::optional<json>> ok_rows(samples.size()), fail_rows(samples.size());
    parallel_for(samples.size(), parallel, [&](std::size_t i) {
        const auto& s = samples[i];
        if (done.count(s.id)) return;
        SplitMix64 rng(hash_combine(seed, s.id));
        try {
            auto res = vest::insert_fake_details(gateway, cfg.judge->id, s, fixed_n, rng,
                                                 cfg.vest_opts);
            ok_rows[i] = core::to_json(res.fake_answer);
        } catch (const vest::VestError& e) {
            fail_rows[i] = json{{"sample_id", s.id},
                                {"reason", e.what()},
                                {"parse_attempts", e.parse_attempts}};
        } catch (const std::exception& e) {
            fail_rows[i] = json{{"sample_id", s.id}, {"reason", e.what()}, {"parse_attempts", 0}};
        }
    });

    jsonl::Writer ok_w(out_path, resume);
    jsonl::Writer fail_w(failed_path(out_path), resume);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (ok_rows[i]) {
            ok_w.write(*ok_rows[i]);
            ++result.ok;
        } else if (fail_rows[i]) {
            fail_w.write(*fail_rows[i]);
            ++result.failed;
        } else {
            ++result.skipped;
        }
    }
    write_metadata(out_path, cfg, seed, "gen-fake", t0, result);
    return result;
}

// ---------------------------------------------------------------------------
// critique: fake answers x critic endpoints -> critiques

inline StageResult run_critique(gw::Gateway& gateway, const config::Config& cfg,
                                const std::string& samples_path, const std::string& fakes_path,
                                const std::string& out_path, std::uint64_t seed, bool resume,
                                int parallel) {
    if (!cfg.judge) throw config::ConfigError("critique requires a judge endpoint");
    if (cfg.critics.empty()) throw config::ConfigError("critique requires critic endpoints");
    std::int64_t t0 = now_ms();
    auto samples = jsonl::read_jsonl_as<core::VqaSample>(samples_path, core::vqa_sample_from_json);
    auto fakes = jsonl::read_jsonl_as<core::FakeAnswer>(fakes_path, core::fake_answer_from_json);
    std::map<std::string, const core::VqaSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;

    std::set<std::string> done;
    if (resume) {
        done = existing_composite_keys(out_path, "sample_id", "critic_model");
        for (const auto& k :
             existing_composite_keys(failed_path(out_path), "sample_id", "critic_model"))
            done.insert(k);
    }

    struct Task {
        const core::FakeAnswer* fake;
        const core::VqaSample* sample;
        std::string critic_id;
    };
    std::vector<Task> tasks;
    for (const auto& f : fakes) {
        auto it = by_id.find(f.sample_id);
        if (it == by_id.end())
            throw core::SchemaError("fake answer references unknown sample: " + f.sample_id);
        for (const auto& critic : cfg.critics) {
            if (done.count(f.sample_id + "\x1f" + critic.id)) continue;
            tasks.push_back(Task{&f, it->second, critic.id});
        }
    }

    StageResult result;
    result.skipped = int(done.size());
    std::vector<std::optional<json>> ok_rows(tasks.size()), fail_rows(tasks.size());
    parallel_for(tasks.size(), parallel, [&](std::size_t i) {
        const Task& t = tasks[i];
        try {
            auto rec = vest::collect_critique(gateway, t.critic_id, cfg.judge->id, *t.sample,
                                              *t.fake, cfg.vest_opts);
            ok_rows[i] = core::to_json(rec);
        } catch (const std::exception& e) {
            fail_rows[i] = json{{"sample_id", t.sample->id},
                                {"critic_model", t.critic_id},
                                {"reason", e.what()}};
        }
    });

    jsonl::Writer ok_w(out_path, resume);
    jsonl::Writer fail_w(failed_path(out_path), resume);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (ok_rows[i]) {
            ok_w.write(*ok_rows[i]);
            ++result.ok;
        } else {
            fail_w.write(*fail_rows[i]);
            ++result.failed;
        }
    }
    write_metadata(out_path, cfg, seed, "critique", t0, result);
    return result;
}

// ---------------------------------------------------------------------------
// score: critiques -> rule-based reward records

inline StageResult run_score(gw::Gateway& gateway, const config::Config& cfg,
                             const std::string& fakes_path, const std::string& critiques_path,
                             const std::string& out_path, std::uint64_t seed, bool offline,
                             bool resume, int parallel) {
    if (!offline && !cfg.judge)
        throw config::ConfigError("score requires a judge endpoint unless --offline");
    std::int64_t t0 = now_ms();
    auto fakes = jsonl::read_jsonl_as<core::FakeAnswer>(fakes_path, core::fake_answer_from_json);
    auto critiques =
        jsonl::read_jsonl_as<core::CritiqueRecord>(critiques_path, core::critique_record_from_json);
    std::map<std::string, const core::FakeAnswer*> fake_by_id;
    for (const auto& f : fakes) fake_by_id[f.sample_id] = &f;

    std::set<std::string> done;
    if (resume) done = existing_composite_keys(out_path, "sample_id", "critic_model");

    StageResult result;
    std::vector<std::optional<json>> ok_rows(critiques.size()), fail_rows(critiques.size());
    parallel_for(critiques.size(), parallel, [&](std::size_t i) {
        const auto& c = critiques[i];
        if (done.count(c.sample_id + "\x1f" + c.critic_model)) return;
        auto fit = fake_by_id.find(c.sample_id);
        if (fit == fake_by_id.end()) {
            fail_rows[i] = json{{"sample_id", c.sample_id},
                                {"critic_model", c.critic_model},
                                {"reason", "no fake answer for sample"}};
            return;
        }
        const core::FakeAnswer& fake = *fit->second;
        auto m = rbr::match_details(fake.inserted_details, c.detected_details, cfg.rbr_tau);
        double jac = rbr::jaccard(m);
        try {
            json rubric = json::object();
            int judge_score = 0;
            bool clamped = false;
            if (!offline) {
                auto r = rbr::judge_rubric_score(gateway, cfg.judge->id, c, fake,
                                                 cfg.vest_opts.max_parse_attempts);
                judge_score = r.judge_score;
                clamped = r.clamped;
                rubric = json{{"answers", r.answers}, {"explanation", r.explanation}};
            }
            double fs = rbr::final_score(jac, judge_score, cfg.rbr_alpha);
            ok_rows[i] = json{{"sample_id", c.sample_id},
                              {"critic_model", c.critic_model},
                              {"jaccard", jac},
                              {"judge_score", judge_score},
                              {"alpha", cfg.rbr_alpha},
                              {"final_score", fs},
                              {"rubric", rubric},
                              {"clamped", clamped}};
        } catch (const std::exception& e) {
            fail_rows[i] = json{{"sample_id", c.sample_id},
                                {"critic_model", c.critic_model},
                                {"reason", e.what()}};
        }
    });

    jsonl::Writer ok_w(out_path, resume);
    jsonl::Writer fail_w(failed_path(out_path), resume);
    for (std::size_t i = 0; i < critiques.size(); ++i) {
        if (ok_rows[i]) {
            ok_w.write(*ok_rows[i]);
            ++result.ok;
        } else if (fail_rows[i]) {
            fail_w.write(*fail_rows[i]);
            ++result.failed;
        } else {
            ++result.skipped;
        }
    }
    write_metadata(out_path, cfg, seed, offline ? "score-offline" : "score", t0, result);
    return result;
}

// ---------------------------------------------------------------------------
// pairs: scored critiques -> preference pairs + dataset stats

inline StageResult run_pairs(const config::Config& cfg, const std::string& samples_path,
                             const std::string& critiques_path, const std::string& scored_path,
                             const std::string& out_path, const std::string& stats_path,
                             std::uint64_t seed) {
    std::int64_t t0 = now_ms();
    auto samples = jsonl::read_jsonl_as<core::VqaSample>(samples_path, core::vqa_sample_from_json);
    auto critiques =
        jsonl::read_jsonl_as<core::CritiqueRecord>(critiques_path, core::critique_record_from_json);
    auto scored_rows = jsonl::read_jsonl(scored_path);

    std::map<std::string, core::CritiqueRecord*> crit_by_key;
    for (auto& c : critiques) crit_by_key[c.sample_id + "\x1f" + c.critic_model] = &c;

    std::map<std::string, std::vector<core::ScoredCritique>> by_sample;
    for (const auto& row : scored_rows) {
        core::ScoredCritique sc;
        std::string sid = row.at("sample_id");
        std::string model = row.at("critic_model");
        auto it = crit_by_key.find(sid + "\x1f" + model);
        if (it == crit_by_key.end())
            throw core::SchemaError("scored record without critique: " + sid + "/" + model);
        sc.critique = *it->second;
        sc.jaccard = row.at("jaccard");
        sc.judge_score = row.at("judge_score");
        sc.alpha = row.at("alpha");
        sc.final_score = row.at("final_score");
        by_sample[sid].push_back(std::move(sc));
    }

    std::vector<core::PreferencePair> all_pairs;
    StageResult result;
    for (const auto& s : samples) {
        auto it = by_sample.find(s.id);
        if (it == by_sample.end()) continue;
        auto ranked = prefbuild::rank_critiques(it->second);
        auto pairs = prefbuild::build_pairs(s.question, s.image_ref, ranked, cfg.pref_epsilon,
                                            cfg.pref_mode);
        for (auto& p : pairs) all_pairs.push_back(std::move(p));
        ++result.ok;
    }

    jsonl::Writer w(out_path);
    for (const auto& p : all_pairs) w.write(core::to_json(p));
    json stats = prefbuild::dataset_stats(all_pairs);
    stats["mode"] =
        cfg.pref_mode == prefbuild::PairMode::best_worst ? "best_worst" : "all_pairs";
    stats["epsilon"] = cfg.pref_epsilon;
    std::ofstream sf(stats_path);
    sf << stats.dump(2) << '\n';
    write_metadata(out_path, cfg, seed, "pairs", t0, result);
    return result;
}

// ---------------------------------------------------------------------------
// eval: benchmark -> report + transcripts

inline StageResult run_eval(gw::Gateway& gateway, const config::Config& cfg,
                            const std::string& bench_path, const std::string& mode,
                            int max_iterations, const std::string& report_path,
                            const std::string& transcripts_path, std::uint64_t seed, bool strict,
                            int parallel) {
    std::int64_t t0 = now_ms();
    auto items = bench::load_benchmark(bench_path);

    bench::EvalConfig ec;
    ec.benchmark_name = bench_path;
    ec.mode = bench::eval_mode_from_string(mode);
    if (!cfg.reasoner) throw config::ConfigError("eval requires a reasoner endpoint");
    ec.reasoner_id = cfg.reasoner->id;
    if (!cfg.critics.empty()) ec.critic_id = cfg.critics.front().id;
    ec.max_iterations = max_iterations;
    ec.strict = strict;
    ec.parallel = parallel;
    ec.seed = seed;
    ec.loop_template = cfg.loop_cfg;

    auto report = bench::evaluate(gateway, items, ec);

    jsonl::Writer tw(transcripts_path);
    for (const auto& t : report.transcripts) tw.write(loop::to_json(t));
    std::ofstream rf(report_path);
    rf << bench::to_json(report, ec.mode, seed).dump(2) << '\n';

    StageResult result;
    result.ok = report.n_items;
    for (const auto& t : report.transcripts)
        if (!t.rounds.empty() && t.rounds.back().stop_reason &&
            *t.rounds.back().stop_reason == "transport_error") {
            ++result.failed;
            --result.ok;
        }
    write_metadata(report_path, cfg, seed, "eval-" + mode, t0, result);
    return result;
}

// ---------------------------------------------------------------------------
// dpo-verify: closed-form identity + finite-difference gradient check

inline json dpo_verification_report(int n_instances, std::uint64_t seed, double fd_h = 1e-5) {
    SplitMix64 rng(seed);
    std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta"};

    double max_ln2_err = 0.0;
    for (int i = 0; i < 50; ++i) {
        std::vector<dpo::DpoBatchItem> batch;
        int n = rng.uniform_int(1, 8);
        for (int k = 0; k < n; ++k) {
            double lw = rng.uniform_real() * 4 - 2;
            double ll = rng.uniform_real() * 4 - 2;
            batch.push_back({lw, ll, lw, ll, rng.uniform_real() * 2 + 0.1});
        }
        max_ln2_err = std::max(max_ln2_err, std::abs(dpo::dpo_loss(batch) - std::log(2.0)));
    }

    double max_rel_err = 0.0;
    for (int inst = 0; inst < n_instances; ++inst) {
        dpo::ToyPolicy policy(vocab);
        dpo::ToyPolicy ref(vocab);
        auto random_seq = [&] {
            int len = rng.uniform_int(1, 4);
            std::vector<std::string> s;
            for (int i = 0; i < len; ++i) s.push_back(vocab[rng.uniform_int(0, 3)]);
            return s;
        };
        dpo::PreferenceSequencePair pair{random_seq(), random_seq()};
        policy.materialize({pair.chosen, pair.rejected});
        for (auto& [k, v] : policy.logits()) v = rng.uniform_real() * 2 - 1;
        for (const auto& [k, v] : policy.logits())
            ref.logits()[k] = rng.uniform_real() * 2 - 1;
        double beta = rng.uniform_real() * 2 + 0.25;

        auto loss_at = [&](dpo::ToyPolicy& p) {
            return dpo::dpo_loss({dpo::make_batch_item(p, ref, pair, beta)});
        };
        auto analytic = dpo::dpo_grad(policy, ref, pair, beta);
        for (auto& [key, g] : analytic) {
            double orig = policy.logits()[key];
            policy.logits()[key] = orig + fd_h;
            double lp = loss_at(policy);
            policy.logits()[key] = orig - fd_h;
            double lm = loss_at(policy);
            policy.logits()[key] = orig;
            double fd = (lp - lm) / (2 * fd_h);
            double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
            max_rel_err = std::max(max_rel_err, rel);
        }
    }

    return json{{"ln2_identity", {{"max_abs_error", max_ln2_err}, {"tolerance", 1e-12},
                                  {"pass", max_ln2_err < 1e-12}}},
                {"gradient_check",
                 {{"instances", n_instances},
                  {"fd_step", fd_h},
                  {"max_relative_error", max_rel_err},
                  {"tolerance", 1e-6},
                  {"pass", max_rel_err < 1e-6}}}};
}

// ---------------------------------------------------------------------------
// toy-train: preference pairs -> trained toy policy + loss trace CSV

inline json run_toy_train(const std::string& pairs_path, const std::string& trace_csv_path,
                          double lr, int steps, double beta) {
    auto pair_rows =
        jsonl::read_jsonl_as<core::PreferencePair>(pairs_path, core::preference_pair_from_json);
    if (pair_rows.empty()) throw std::invalid_argument("toy-train: no pairs in " + pairs_path);

    std::set<std::string> vocab_set;
    std::vector<dpo::PreferenceSequencePair> seq_pairs;
    for (const auto& p : pair_rows) {
        dpo::PreferenceSequencePair sp{dpo::whitespace_tokens(p.chosen),
                                       dpo::whitespace_tokens(p.rejected)};
        for (const auto& t : sp.chosen) vocab_set.insert(t);
        for (const auto& t : sp.rejected) vocab_set.insert(t);
        seq_pairs.push_back(std::move(sp));
    }
    dpo::ToyPolicy policy(std::vector<std::string>(vocab_set.begin(), vocab_set.end()));
    auto result = dpo::train_toy(std::move(policy), seq_pairs, lr, steps, beta);

    std::ofstream csv(trace_csv_path);
    csv << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i)
        csv << i << ',' << result.loss_trace[i] << '\n';

    dpo::ToyPolicy ref(result.policy.vocabulary());
    int positive_margins = 0;
    for (const auto& sp : seq_pairs) {
        // margin against the uniform init equals the trained-vs-ref margin
        // because training starts at ref == zero logits
        dpo::DpoBatchItem item = dpo::make_batch_item(result.policy, ref, sp, beta);
        if (dpo::dpo_margin(item) > 0) ++positive_margins;
    }
    return json{{"pairs", seq_pairs.size()},
                {"steps", steps},
                {"lr", lr},
                {"beta", beta},
                {"aborted", result.aborted},
                {"initial_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.front()},
                {"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
                {"positive_margins", positive_margins}};
}

}  // namespace criticv::pipeline
