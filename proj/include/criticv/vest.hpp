#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "criticv/core.hpp"
#include "criticv/gateway.hpp"
#include "criticv/prompts.hpp"
#include "criticv/rbr.hpp"
#include "criticv/util.hpp"

namespace criticv::vest {

using core::ErrorDetail;
using core::FakeAnswer;
using core::VqaSample;
using json = nlohmann::json;

struct VestError : std::runtime_error {
    int parse_attempts = 0;
    VestError(const std::string& msg, int attempts)
        : std::runtime_error(msg), parse_attempts(attempts) {}
};

struct InsertionResult {
    FakeAnswer fake_answer;
    std::string raw_judge_reply;
    int parse_attempts = 0;
};

// Judge models often wrap JSON in prose; scan for the outermost balanced
// object (or array), honoring string escapes.
inline std::optional<json> extract_json_value(const std::string& text, char open, char close) {
    auto start = text.find(open);
    while (start != std::string::npos) {
        int depth = 0;
        bool in_string = false, escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == open) ++depth;
            else if (c == close && --depth == 0) {
                json j = json::parse(text.substr(start, i - start + 1), nullptr, false);
                if (!j.is_discarded()) return j;
                break;
            }
        }
        start = text.find(open, start + 1);
    }
    return std::nullopt;
}

struct Options {
    int max_parse_attempts = 3;
    double tau = 0.5;  // matcher threshold for the "inserted detail absent" check
    std::string insertion_template = prompts::kInsertionTemplate;
    std::string extraction_answer_template = prompts::kExtractAnswerTemplate;
    std::string extraction_errors_template = prompts::kExtractCritiqueErrorsTemplate;
    std::string critique_template = prompts::kCritiqueTemplate;
};

// Asks the judge to enumerate atomic factual details as a JSON array.
// Order preserved; duplicates under normalization removed keeping the first.
inline std::vector<ErrorDetail> extract_details(gw::Gateway& gateway, const std::string& judge_id,
                                                const std::string& text, bool critique_errors,
                                                const Options& opts = {}) {
    const std::string& tmpl =
        critique_errors ? opts.extraction_errors_template : opts.extraction_answer_template;
    std::string prompt = prompts::render_extraction_prompt(text, critique_errors, tmpl);
    int attempts = 0;
    for (; attempts < opts.max_parse_attempts; ++attempts) {
        auto reply = gateway.complete_chat(judge_id, {gw::ChatMessage::user_text(prompt)},
                                           gw::GenParams::judge_defaults());
        auto arr = extract_json_value(reply.text, '[', ']');
        if (!arr || !arr->is_array()) continue;
        std::vector<ErrorDetail> out;
        std::set<std::string> seen;
        bool ok = true;
        for (const auto& item : *arr) {
            if (!item.is_string()) {
                ok = false;
                break;
            }
            ErrorDetail d = core::normalize_detail(item.get<std::string>());
            if (d.normalized.empty()) continue;
            if (seen.insert(d.normalized).second) out.push_back(std::move(d));
        }
        if (ok) return out;
    }
    throw VestError("detail extraction: unparsable judge reply", attempts);
}

// Algorithm: build the fake answer with n inserted details (n drawn uniformly
// from 1..5 when unspecified), require each inserted detail to be absent from
// the true answer's details, re-prompting once on a violation.
inline InsertionResult insert_fake_details(gw::Gateway& gateway, const std::string& judge_id,
                                           const VqaSample& sample, std::optional<int> n,
                                           SplitMix64& rng, const Options& opts = {}) {
    if (n && (*n < 1 || *n > 5))
        throw std::invalid_argument("requested n must be in [1,5]");
    int n_eff = n ? *n : rng.uniform_int(1, 5);

    std::vector<ErrorDetail> true_details =
        extract_details(gateway, judge_id, sample.true_answer, false, opts);

    std::string prompt = prompts::render_insertion_prompt(sample.question, sample.true_answer,
                                                          n_eff, opts.insertion_template);
    int attempts = 0;
    std::string last_reply;
    bool reprompted_overlap = false;
    while (attempts < opts.max_parse_attempts) {
        ++attempts;
        auto reply = gateway.complete_chat(judge_id, {gw::ChatMessage::user_text(prompt)},
                                           gw::GenParams::judge_defaults());
        last_reply = reply.text;
        auto obj = extract_json_value(reply.text, '{', '}');
        if (!obj || !obj->is_object() || !obj->contains("fake_answer") ||
            !obj->contains("inserted_details") || !(*obj)["inserted_details"].is_array())
            continue;

        FakeAnswer fake;
        fake.sample_id = sample.id;
        fake.text = (*obj)["fake_answer"].get<std::string>();
        for (const auto& d : (*obj)["inserted_details"]) {
            if (!d.is_string()) break;
            fake.inserted_details.push_back(core::normalize_detail(d.get<std::string>()));
        }
        fake.n_inserted = int(fake.inserted_details.size());
        if (fake.n_inserted != n_eff) continue;

        // every inserted detail must be absent from the true answer's details
        auto m = rbr::match_details(fake.inserted_details, true_details, opts.tau);
        if (m.intersection > 0) {
            if (reprompted_overlap)
                throw VestError("inserted details overlap the true answer after re-prompt",
                                attempts);
            reprompted_overlap = true;
            continue;
        }
        return InsertionResult{std::move(fake), std::move(last_reply), attempts};
    }
    throw VestError("bug insertion: unparsable judge reply", attempts);
}

// Sends the critique prompt for the degraded answer, then extracts the set of
// errors the critique claims (via the judge) and records the token count.
inline core::CritiqueRecord collect_critique(gw::Gateway& gateway, const std::string& critic_id,
                                             const std::string& judge_id, const VqaSample& sample,
                                             const FakeAnswer& fake, const Options& opts = {}) {
    std::string prompt =
        prompts::render_critique_prompt(sample.question, fake.text, opts.critique_template);
    auto msg = sample.image_ref.empty()
                   ? gw::ChatMessage::user_text(prompt)
                   : gw::ChatMessage::user_text_image(prompt, sample.image_ref);
    auto reply =
        gateway.complete_chat(critic_id, {msg}, gw::GenParams::reasoner_defaults());

    core::CritiqueRecord rec;
    rec.sample_id = sample.id;
    rec.critic_model = critic_id;
    rec.critique_text = reply.text;
    rec.detected_details = extract_details(gateway, judge_id, reply.text, true, opts);
    auto [count, method] = gw::count_tokens(reply, reply.text);
    rec.token_count = count;
    rec.token_count_method = method == gw::CountMethod::reported
                                 ? core::TokenCountMethod::reported
                                 : core::TokenCountMethod::whitespace;
    return rec;
}

}  // namespace criticv::vest
