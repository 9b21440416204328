// criticv: command-line driver for the critique data pipeline, the desk-scale
// preference-loss checks, and the reasoner-critic benchmark harness.

#include <csignal>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "criticv/config.hpp"
#include "criticv/mock_server.hpp"
#include "criticv/pipeline.hpp"

namespace {

using namespace criticv;

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    int parallel = 4;
    bool resume = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", c.config_path, "JSON config file");
    if (needs_config) opt->required();
    cmd->add_option("--seed", c.seed, "run seed (derives per-sample seeds)");
    cmd->add_option("--parallel", c.parallel, "worker pool size")->check(CLI::PositiveNumber);
    cmd->add_flag("--resume", c.resume, "skip samples already present in the output");
}

config::Config load(const Common& c) { return config::load_config(c.config_path); }

std::unique_ptr<gw::Gateway> make_gateway(const config::Config& cfg, int parallel) {
    auto g = std::make_unique<gw::Gateway>(parallel);
    config::register_endpoints(*g, cfg);
    return g;
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Critique data pipeline, preference-loss verification, and eval harness"};
    app.require_subcommand(1);

    Common c;

    // gen-fake
    std::string in_path, out_path;
    std::optional<int> fixed_n;
    auto* gen = app.add_subcommand("gen-fake", "insert fake details into true answers");
    add_common(gen, c);
    gen->add_option("--in", in_path, "samples JSONL")->required();
    gen->add_option("--out", out_path, "fake-answers JSONL")->required();
    gen->add_option("--n-details", fixed_n, "fix the number of inserted details (1-5)");

    // critique
    std::string fakes_path;
    auto* crit = app.add_subcommand("critique", "collect critiques from critic endpoints");
    add_common(crit, c);
    crit->add_option("--samples", in_path, "samples JSONL")->required();
    crit->add_option("--fakes", fakes_path, "fake-answers JSONL")->required();
    crit->add_option("--out", out_path, "critiques JSONL")->required();

    // score
    std::string critiques_path;
    bool offline = false;
    auto* score = app.add_subcommand("score", "score critiques with the rule-based reward");
    add_common(score, c);
    score->add_option("--fakes", fakes_path, "fake-answers JSONL")->required();
    score->add_option("--critiques", critiques_path, "critiques JSONL")->required();
    score->add_option("--out", out_path, "scored critiques JSONL")->required();
    score->add_flag("--offline", offline, "skip the judge; judge_score fixed at 0");

    // pairs
    std::string scored_path, stats_path;
    auto* pairs = app.add_subcommand("pairs", "build DPO preference pairs from scored critiques");
    add_common(pairs, c);
    pairs->add_option("--samples", in_path, "samples JSONL")->required();
    pairs->add_option("--critiques", critiques_path, "critiques JSONL")->required();
    pairs->add_option("--scored", scored_path, "scored critiques JSONL")->required();
    pairs->add_option("--out", out_path, "preference pairs JSONL")->required();
    pairs->add_option("--stats", stats_path, "dataset stats JSON")->required();

    // dpo-verify
    int grad_instances = 100;
    auto* verify = app.add_subcommand("dpo-verify", "loss identity and gradient checks");
    add_common(verify, c, /*needs_config=*/false);
    verify->add_option("--out", out_path, "verification report JSON")->required();
    verify->add_option("--instances", grad_instances, "randomized gradient-check instances");

    // toy-train
    double lr = 0.1, beta = 1.0;
    int steps = 200;
    std::string trace_path;
    auto* toy = app.add_subcommand("toy-train", "train the tabular toy policy on pairs");
    add_common(toy, c, /*needs_config=*/false);
    toy->add_option("--pairs", in_path, "preference pairs JSONL")->required();
    toy->add_option("--trace", trace_path, "loss trace CSV")->required();
    toy->add_option("--out", out_path, "training summary JSON")->required();
    toy->add_option("--lr", lr, "learning rate");
    toy->add_option("--steps", steps, "gradient steps");
    toy->add_option("--beta", beta, "preference parameter beta");

    // eval
    std::string mode = "baseline", report_path, transcripts_path;
    int max_iterations = 1;
    bool strict = false;
    auto* ev = app.add_subcommand("eval", "run a benchmark through the reasoner-critic loop");
    add_common(ev, c);
    ev->add_option("--bench", in_path, "benchmark JSONL")->required();
    ev->add_option("--mode", mode, "baseline|special_prompt_only|self_refine|critic_v");
    ev->add_option("--max-iterations", max_iterations, "critique/revise cycles");
    ev->add_option("--report", report_path, "report JSON")->required();
    ev->add_option("--transcripts", transcripts_path, "transcripts JSONL")->required();
    ev->add_flag("--strict", strict, "drop failed items from the accuracy denominator");

    // mock-serve
    std::string script_path, bind_host = "127.0.0.1";
    int port = 8089;
    auto* mockc = app.add_subcommand("mock-serve", "serve scripted replies on the wire protocol");
    mockc->add_option("--script", script_path, "mock script JSONL")->required();
    mockc->add_option("--host", bind_host, "bind address");
    mockc->add_option("--port", port, "bind port");

    // stats
    auto* st = app.add_subcommand("stats", "dataset statistics for a pairs file");
    st->add_option("--pairs", in_path, "preference pairs JSONL")->required();
    st->add_option("--out", out_path, "stats JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = load(c);
            auto g = make_gateway(cfg, c.parallel);
            auto r = pipeline::run_gen_fake(*g, cfg, in_path, out_path, c.seed, c.resume,
                                            c.parallel, fixed_n);
            std::cerr << "gen-fake: ok=" << r.ok << " failed=" << r.failed
                      << " skipped=" << r.skipped << "\n";
            return r.exit_code();
        }
        if (crit->parsed()) {
            auto cfg = load(c);
            auto g = make_gateway(cfg, c.parallel);
            auto r = pipeline::run_critique(*g, cfg, in_path, fakes_path, out_path, c.seed,
                                            c.resume, c.parallel);
            std::cerr << "critique: ok=" << r.ok << " failed=" << r.failed
                      << " skipped=" << r.skipped << "\n";
            return r.exit_code();
        }
        if (score->parsed()) {
            auto cfg = load(c);
            auto g = make_gateway(cfg, c.parallel);
            auto r = pipeline::run_score(*g, cfg, fakes_path, critiques_path, out_path, c.seed,
                                         offline, c.resume, c.parallel);
            std::cerr << "score: ok=" << r.ok << " failed=" << r.failed
                      << " skipped=" << r.skipped << "\n";
            return r.exit_code();
        }
        if (pairs->parsed()) {
            auto cfg = load(c);
            auto r = pipeline::run_pairs(cfg, in_path, critiques_path, scored_path, out_path,
                                         stats_path, c.seed);
            std::cerr << "pairs: samples=" << r.ok << "\n";
            return r.exit_code();
        }
        if (verify->parsed()) {
            auto report = pipeline::dpo_verification_report(grad_instances, c.seed);
            std::ofstream f(out_path);
            f << report.dump(2) << '\n';
            bool pass = report["ln2_identity"]["pass"].get<bool>() &&
                        report["gradient_check"]["pass"].get<bool>();
            std::cerr << "dpo-verify: " << (pass ? "pass" : "FAIL") << "\n";
            return pass ? 0 : 1;
        }
        if (toy->parsed()) {
            auto summary = pipeline::run_toy_train(in_path, trace_path, lr, steps, beta);
            std::ofstream f(out_path);
            f << summary.dump(2) << '\n';
            std::cerr << "toy-train: final_loss=" << summary["final_loss"] << "\n";
            return summary["aborted"].get<bool>() ? 1 : 0;
        }
        if (ev->parsed()) {
            auto cfg = load(c);
            auto g = make_gateway(cfg, c.parallel);
            auto r = pipeline::run_eval(*g, cfg, in_path, mode, max_iterations, report_path,
                                        transcripts_path, c.seed, strict, c.parallel);
            std::cerr << "eval: items=" << r.ok + r.failed << " failed=" << r.failed << "\n";
            return r.exit_code();
        }
        if (mockc->parsed()) {
            mock::MockServer server;
            server.load_script(script_path);
            int bound = server.start(bind_host, port);
            std::cerr << "mock server listening on " << bind_host << ":" << bound << "\n";
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
            return 0;
        }
        if (st->parsed()) {
            auto rows = jsonl::read_jsonl_as<core::PreferencePair>(
                in_path, core::preference_pair_from_json);
            auto stats = prefbuild::dataset_stats(rows);
            std::ofstream f(out_path);
            f << stats.dump(2) << '\n';
            return 0;
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gw::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const core::SchemaError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const jsonl::JsonlError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const jsonl::IoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
