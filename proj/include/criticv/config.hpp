#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "criticv/bench.hpp"
#include "criticv/gateway.hpp"
#include "criticv/loop.hpp"
#include "criticv/prefbuild.hpp"
#include "criticv/util.hpp"
#include "criticv/vest.hpp"

namespace criticv::config {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Config {
    std::optional<gw::EndpointConfig> reasoner;
    std::vector<gw::EndpointConfig> critics;
    std::optional<gw::EndpointConfig> judge;

    vest::Options vest_opts;
    double rbr_tau = 0.5;
    double rbr_alpha = 0.1;
    double pref_epsilon = 0.05;
    prefbuild::PairMode pref_mode = prefbuild::PairMode::best_worst;
    loop::LoopConfig loop_cfg;
    bool bench_strict = false;

    json effective;  // fully defaulted config, hashed into run metadata
};

inline gw::EndpointConfig endpoint_from_json(const json& j, const std::string& key) {
    if (!j.is_object() || !j.contains("base_url") || !j.contains("model"))
        throw ConfigError("endpoint " + key + " needs base_url and model");
    gw::EndpointConfig e;
    e.id = j.value("id", key);
    e.base_url = j.at("base_url");
    e.model = j.at("model");
    e.api_key_env = j.value("api_key_env", "");
    e.max_attempts = j.value("max_attempts", 3);
    e.backoff_base_ms = j.value("backoff_base_ms", 200);
    return e;
}

inline json endpoint_to_json(const gw::EndpointConfig& e) {
    return json{{"id", e.id},
                {"base_url", e.base_url},
                {"model", e.model},
                {"api_key_env", e.api_key_env},
                {"max_attempts", e.max_attempts},
                {"backoff_base_ms", e.backoff_base_ms}};
}

inline Config parse_config(const json& j) {
    Config c;
    if (j.contains("endpoints")) {
        const json& e = j.at("endpoints");
        if (e.contains("reasoner")) c.reasoner = endpoint_from_json(e.at("reasoner"), "reasoner");
        if (e.contains("judge")) c.judge = endpoint_from_json(e.at("judge"), "judge");
        if (e.contains("critics")) {
            int i = 0;
            for (const auto& cj : e.at("critics"))
                c.critics.push_back(endpoint_from_json(cj, "critic" + std::to_string(i++)));
        }
    }
    for (std::size_t i = 0; i < c.critics.size(); ++i)
        for (std::size_t k = i + 1; k < c.critics.size(); ++k)
            if (c.critics[i].id == c.critics[k].id)
                throw ConfigError("duplicate critic endpoint id: " + c.critics[i].id);

    if (j.contains("vest")) {
        const json& v = j.at("vest");
        c.vest_opts.max_parse_attempts = v.value("max_parse_attempts", 3);
    }
    if (j.contains("rbr")) {
        const json& r = j.at("rbr");
        c.rbr_tau = r.value("tau", 0.5);
        c.rbr_alpha = r.value("alpha", 0.1);
    }
    c.vest_opts.tau = c.rbr_tau;
    if (j.contains("prefbuild")) {
        const json& p = j.at("prefbuild");
        c.pref_epsilon = p.value("epsilon", 0.05);
        c.pref_mode = prefbuild::pair_mode_from_string(p.value("mode", "best_worst"));
    }
    if (j.contains("loop")) {
        const json& l = j.at("loop");
        c.loop_cfg.max_iterations = l.value("max_iterations", 1);
        std::string rule = l.value("stop_rule", "fixed");
        if (rule == "fixed") c.loop_cfg.stop_rule = loop::StopRule::fixed;
        else if (rule == "sentinel") c.loop_cfg.stop_rule = loop::StopRule::sentinel;
        else throw ConfigError("unknown stop_rule: " + rule);
        c.loop_cfg.sentinel_marker = l.value("sentinel_marker", std::string("CRITIQUE_OK"));
        c.loop_cfg.eta = l.value("eta", 1.0);
        c.loop_cfg.nested_reflection = l.value("nested_reflection", false);
        c.loop_cfg.resend_image = l.value("resend_image", true);
    }
    if (j.contains("bench")) c.bench_strict = j.at("bench").value("strict", false);

    // canonical effective config (nlohmann orders object keys)
    json eff = j;
    eff["rbr"] = json{{"tau", c.rbr_tau}, {"alpha", c.rbr_alpha}};
    eff["prefbuild"] = json{{"epsilon", c.pref_epsilon},
                            {"mode", c.pref_mode == prefbuild::PairMode::best_worst
                                         ? "best_worst"
                                         : "all_pairs"}};
    eff["vest"] = json{{"max_parse_attempts", c.vest_opts.max_parse_attempts}};
    c.effective = eff;
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    return parse_config(j);
}

inline std::string config_hash(const Config& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(c.effective.dump()));
    return buf;
}

inline void register_endpoints(gw::Gateway& gateway, const Config& c) {
    if (c.reasoner) gateway.add_endpoint(*c.reasoner);
    if (c.judge) gateway.add_endpoint(*c.judge);
    for (const auto& e : c.critics) gateway.add_endpoint(e);
}

}  // namespace criticv::config
