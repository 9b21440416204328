#pragma once

#include <atomic>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "criticv/jsonl.hpp"
#include "criticv/util.hpp"

namespace criticv::mock {

using json = nlohmann::json;

struct ScriptError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One scripted rule. Matching is on the last user message's text; `model`
// additionally constrains the request's model field when present. First
// matching rule wins, in script order.
struct MockRule {
    std::optional<std::string> contains;
    std::optional<std::string> hash;  // hex fnv1a64 of the last user message
    std::optional<std::string> model;
    std::string reply;
    std::optional<int> usage_completion;
    std::optional<int> usage_prompt;
    int delay_ms = 0;
};

inline MockRule parse_rule(const json& j, int index) {
    if (!j.is_object() || !j.contains("match") || !j.contains("reply"))
        throw ScriptError("rule " + std::to_string(index) + ": needs match and reply");
    MockRule r;
    const json& m = j.at("match");
    if (m.contains("contains")) r.contains = m.at("contains").get<std::string>();
    if (m.contains("hash")) r.hash = m.at("hash").get<std::string>();
    if (m.contains("model")) r.model = m.at("model").get<std::string>();
    if (!r.contains && !r.hash)
        throw ScriptError("rule " + std::to_string(index) + ": match needs contains or hash");
    r.reply = j.at("reply").get<std::string>();
    if (j.contains("usage")) {
        const json& u = j.at("usage");
        if (u.contains("completion")) r.usage_completion = u.at("completion").get<int>();
        if (u.contains("prompt")) r.usage_prompt = u.at("prompt").get<int>();
    }
    if (j.contains("delay_ms")) r.delay_ms = j.at("delay_ms").get<int>();
    return r;
}

// Deterministic stand-in for every chat-completions endpoint in tests.
// Identical request sequences yield byte-identical responses.
class MockServer {
public:
    MockServer() = default;
    ~MockServer() { stop(); }

    void load_script(const std::string& path) {
        auto lines = jsonl::read_jsonl(path);
        std::vector<MockRule> rules;
        int i = 0;
        for (const auto& j : lines) rules.push_back(parse_rule(j, i++));
        set_rules(std::move(rules));
    }

    void set_rules(std::vector<MockRule> rules) { rules_ = std::move(rules); }
    void set_fallback(std::string reply) { fallback_ = std::move(reply); }

    // Binds an OS-assigned port unless one is given; returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        server_ = std::make_unique<httplib::Server>();
        server_->Post("/chat/completions",
                      [this](const httplib::Request& req, httplib::Response& res) {
                          handle(req, res);
                      });
        server_->Get("/__stats", [this](const httplib::Request&, httplib::Response& res) {
            json j{{"request_count", request_count_.load()},
                   {"max_concurrent", max_concurrent_.load()}};
            res.set_content(j.dump(), "application/json");
        });
        if (port == 0) {
            port_ = server_->bind_to_any_port(host.c_str());
        } else {
            server_->bind_to_port(host.c_str(), port);
            port_ = port;
        }
        thread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
        return port_;
    }

    void stop() {
        if (server_) server_->stop();
        if (thread_.joinable()) thread_.join();
        server_.reset();
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int request_count() const { return request_count_.load(); }
    int max_concurrent() const { return max_concurrent_.load(); }
    std::string last_request_body() const {
        std::lock_guard lk(mu_);
        return last_body_;
    }

private:
    void handle(const httplib::Request& req, httplib::Response& res) {
        int cur = ++concurrent_;
        int prev = max_concurrent_.load();
        while (cur > prev && !max_concurrent_.compare_exchange_weak(prev, cur)) {}
        ++request_count_;
        {
            std::lock_guard lk(mu_);
            last_body_ = req.body;
        }

        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded()) {
            res.status = 400;
            res.set_content("{\"error\":\"bad json\"}", "application/json");
            --concurrent_;
            return;
        }
        std::string model = body.value("model", "");
        std::string last_user = last_user_text(body);
        std::string user_hash = hex64(fnv1a64(last_user));

        const MockRule* hit = nullptr;
        for (const auto& r : rules_) {
            if (r.model && *r.model != model) continue;
            if (r.contains && last_user.find(*r.contains) == std::string::npos) continue;
            if (r.hash && *r.hash != user_hash) continue;
            hit = &r;
            break;
        }
        std::string reply = hit ? hit->reply : fallback_;
        if (hit && hit->delay_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(hit->delay_ms));

        json out{{"id", "mock"},
                 {"object", "chat.completion"},
                 {"model", model},
                 {"choices",
                  json::array({json{{"index", 0},
                                    {"message", {{"role", "assistant"}, {"content", reply}}},
                                    {"finish_reason", "stop"}}})}};
        if (hit && (hit->usage_completion || hit->usage_prompt)) {
            out["usage"] = json{{"prompt_tokens", hit->usage_prompt.value_or(0)},
                                {"completion_tokens", hit->usage_completion.value_or(0)}};
        }
        res.set_content(out.dump(), "application/json");
        --concurrent_;
    }

    static std::string last_user_text(const json& body) {
        std::string text;
        if (!body.contains("messages") || !body["messages"].is_array()) return text;
        for (const auto& m : body["messages"]) {
            if (m.value("role", "") != "user") continue;
            text.clear();
            const json& content = m.at("content");
            if (content.is_string()) {
                text = content.get<std::string>();
            } else if (content.is_array()) {
                for (const auto& part : content)
                    if (part.value("type", "") == "text") text += part.value("text", "");
            }
        }
        return text;
    }

    static std::string hex64(std::uint64_t v) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
        return buf;
    }

    std::vector<MockRule> rules_;
    std::string fallback_ = "OK.";
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> request_count_{0};
    std::atomic<int> concurrent_{0};
    std::atomic<int> max_concurrent_{0};
    mutable std::mutex mu_;
    std::string last_body_;
};

}  // namespace criticv::mock
