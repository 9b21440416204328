#pragma once

#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "criticv/util.hpp"

namespace criticv::gw {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContentPart {
    enum class Kind { text, image } kind = Kind::text;
    std::string text;       // kind == text
    std::string image_ref;  // kind == image: path or URL
};

struct ChatMessage {
    enum class Role { system, user, assistant } role = Role::user;
    std::vector<ContentPart> parts;

    static ChatMessage user_text(std::string text) {
        return ChatMessage{Role::user, {ContentPart{ContentPart::Kind::text, std::move(text), {}}}};
    }
    static ChatMessage user_text_image(std::string text, std::string image_ref) {
        return ChatMessage{Role::user,
                           {ContentPart{ContentPart::Kind::text, std::move(text), {}},
                            ContentPart{ContentPart::Kind::image, {}, std::move(image_ref)}}};
    }
};

inline std::string to_string(ChatMessage::Role r) {
    switch (r) {
        case ChatMessage::Role::system: return "system";
        case ChatMessage::Role::user: return "user";
        case ChatMessage::Role::assistant: return "assistant";
    }
    return "user";
}

struct GenParams {
    int max_new_tokens = 1024;
    double temperature = 0.01;
    double top_p = 0.001;
    int top_k = 1;
    double repetition_penalty = 1.0;

    // Reasoner/critic generation settings.
    static GenParams reasoner_defaults() { return GenParams{1024, 0.01, 0.001, 1, 1.0}; }
    // Judge runs greedy for stable scoring.
    static GenParams judge_defaults() { return GenParams{1024, 0.0, 1.0, 0, 1.0}; }
};

struct TokenUsage {
    int prompt = 0;
    int completion = 0;
};

struct ModelReply {
    std::string text;
    std::optional<TokenUsage> reported_token_usage;
    std::int64_t latency_ms = 0;
    std::string endpoint_id;
    int attempt_count = 1;
};

struct EndpointConfig {
    std::string id;
    std::string base_url;  // e.g. http://127.0.0.1:8080 or http://host:port/v1
    std::string model;
    std::string api_key_env;  // name of the env var holding the credential
    int max_attempts = 3;
    int backoff_base_ms = 200;
};

enum class CountMethod { reported, whitespace };

inline std::pair<int, CountMethod> count_tokens(const ModelReply& reply, const std::string& text) {
    if (reply.reported_token_usage)
        return {reply.reported_token_usage->completion, CountMethod::reported};
    return {whitespace_token_count(text), CountMethod::whitespace};
}

// Uniform client for OpenAI-compatible chat-completions endpoints. Shareable
// across threads; a counting limiter bounds the number of in-flight requests.
class Gateway {
public:
    explicit Gateway(int concurrency_limit = 4) : limit_(concurrency_limit) {}

    void add_endpoint(EndpointConfig cfg) {
        std::lock_guard lk(mu_);
        endpoints_[cfg.id] = std::move(cfg);
    }

    bool has_endpoint(const std::string& id) const {
        std::lock_guard lk(mu_);
        return endpoints_.count(id) > 0;
    }

    const EndpointConfig& endpoint(const std::string& id) const {
        std::lock_guard lk(mu_);
        auto it = endpoints_.find(id);
        if (it == endpoints_.end()) throw ConfigError("unknown endpoint_id: " + id);
        return it->second;
    }

    void set_concurrency(int n) {
        std::lock_guard lk(mu_);
        limit_ = n;
    }

    ModelReply complete_chat(const std::string& endpoint_id,
                             const std::vector<ChatMessage>& messages, const GenParams& params) {
        EndpointConfig cfg = endpoint(endpoint_id);
        json body = build_request_body(cfg.model, messages, params);
        std::string payload = body.dump();

        auto [host, port, prefix] = parse_base_url(cfg.base_url);
        std::string api_key;
        if (!cfg.api_key_env.empty()) {
            const char* v = std::getenv(cfg.api_key_env.c_str());
            if (v) api_key = v;
        }

        Slot slot(*this);
        std::string attempt_log;
        int backoff = cfg.backoff_base_ms;
        std::int64_t t0 = now_ms();
        for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
            httplib::Client cli(host, port);
            cli.set_read_timeout(120, 0);
            httplib::Headers headers;
            if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
            auto res = cli.Post((prefix + "/chat/completions").c_str(), headers, payload,
                                "application/json");
            if (res && res->status == 200) {
                json rj = json::parse(res->body, nullptr, false);
                if (rj.is_discarded()) throw ProtocolError("non-JSON response body");
                return parse_reply(rj, endpoint_id, attempt, now_ms() - t0);
            }
            int status = res ? res->status : -1;
            attempt_log += "attempt " + std::to_string(attempt) + ": " +
                           (res ? "HTTP " + std::to_string(status) : "transport failure") + "; ";
            bool retryable = !res || status >= 500 || status == 429;
            if (!retryable) {
                json rj = res ? json::parse(res->body, nullptr, false) : json();
                throw TransportError("endpoint " + endpoint_id + " returned HTTP " +
                                     std::to_string(status));
            }
            if (attempt < cfg.max_attempts && backoff > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
        }
        throw TransportError("endpoint " + endpoint_id + " failed after " +
                             std::to_string(cfg.max_attempts) + " attempts: " + attempt_log);
    }

    static json build_request_body(const std::string& model,
                                   const std::vector<ChatMessage>& messages,
                                   const GenParams& params) {
        json msgs = json::array();
        for (const auto& m : messages) {
            json content = json::array();
            for (const auto& p : m.parts) {
                if (p.kind == ContentPart::Kind::text) {
                    content.push_back({{"type", "text"}, {"text", p.text}});
                } else {
                    content.push_back({{"type", "image_url"},
                                       {"image_url", {{"url", resolve_image(p.image_ref)}}}});
                }
            }
            msgs.push_back({{"role", to_string(m.role)}, {"content", content}});
        }
        return json{{"model", model},
                    {"messages", msgs},
                    {"max_tokens", params.max_new_tokens},
                    {"temperature", params.temperature},
                    {"top_p", params.top_p},
                    {"top_k", params.top_k},
                    {"repetition_penalty", params.repetition_penalty}};
    }

private:
    // Inline base64 when the reference is a readable local file, otherwise
    // pass the reference through as a URL.
    static std::string resolve_image(const std::string& ref) {
        if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 ||
            ref.rfind("data:", 0) == 0)
            return ref;
        std::ifstream f(ref, std::ios::binary);
        if (!f) return ref;
        std::ostringstream ss;
        ss << f.rdbuf();
        return "data:image/unknown;base64," + base64_encode(ss.str());
    }

    static std::tuple<std::string, int, std::string> parse_base_url(const std::string& url) {
        std::string rest = url;
        if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
        else throw ConfigError("base_url must start with http://: " + url);
        std::string prefix;
        auto slash = rest.find('/');
        if (slash != std::string::npos) {
            prefix = rest.substr(slash);
            if (prefix == "/") prefix.clear();
            rest = rest.substr(0, slash);
        }
        int port = 80;
        auto colon = rest.find(':');
        std::string host = rest;
        if (colon != std::string::npos) {
            host = rest.substr(0, colon);
            port = std::stoi(rest.substr(colon + 1));
        }
        return {host, port, prefix};
    }

    static ModelReply parse_reply(const json& rj, const std::string& endpoint_id, int attempts,
                                  std::int64_t latency) {
        ModelReply r;
        r.endpoint_id = endpoint_id;
        r.attempt_count = attempts;
        r.latency_ms = latency;
        try {
            r.text = rj.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception&) {
            throw ProtocolError("response missing choices[0].message.content");
        }
        if (rj.contains("usage") && rj["usage"].is_object()) {
            TokenUsage u;
            u.prompt = rj["usage"].value("prompt_tokens", 0);
            u.completion = rj["usage"].value("completion_tokens", 0);
            r.reported_token_usage = u;
        }
        return r;
    }

    // RAII slot in the in-flight limiter.
    class Slot {
    public:
        explicit Slot(Gateway& g) : g_(g) {
            std::unique_lock lk(g_.mu_);
            g_.cv_.wait(lk, [&] { return g_.in_flight_ < g_.limit_; });
            ++g_.in_flight_;
        }
        ~Slot() {
            {
                std::lock_guard lk(g_.mu_);
                --g_.in_flight_;
            }
            g_.cv_.notify_one();
        }

    private:
        Gateway& g_;
    };

    mutable std::mutex mu_;
    std::condition_variable cv_;
    int limit_;
    int in_flight_ = 0;
    std::map<std::string, EndpointConfig> endpoints_;
};

}  // namespace criticv::gw
