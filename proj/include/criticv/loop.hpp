#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "criticv/gateway.hpp"
#include "criticv/prompts.hpp"

namespace criticv::loop {

using json = nlohmann::json;

// Current reasoner prompt plus the critiques applied to reach it.
struct PromptState {
    std::string original_prompt;  // the round-1 question prompt
    std::string text;
    int iteration = 0;
    std::vector<std::string> history;  // applied critiques, in order

    static PromptState initial(std::string question_prompt) {
        PromptState s;
        s.original_prompt = question_prompt;
        s.text = std::move(question_prompt);
        return s;
    }
};

// Concatenation update: the new prompt is the reflection template around the
// latest critique and the original question prompt. eta < 1 truncates the
// critique to ceil(eta * len) characters (extension; the evaluated setting is
// eta = 1). `nested` wraps the current prompt instead of the original one.
inline PromptState update_prompt(const PromptState& state, const std::string& critique,
                                 double eta = 1.0, bool nested = false,
                                 const std::string& tmpl = prompts::kReflectionTemplate) {
    std::string applied = critique;
    if (eta < 1.0) {
        std::size_t keep = std::size_t(std::ceil(eta * double(critique.size())));
        applied = critique.substr(0, keep);
    }
    PromptState next = state;
    const std::string& base = nested ? state.text : state.original_prompt;
    next.text = prompts::render_reflection_prompt(applied, base, tmpl);
    next.iteration = state.iteration + 1;
    next.history.push_back(applied);
    return next;
}

enum class StopRule { fixed, sentinel };

struct Round {
    std::string prompt_text;
    std::string reasoner_reply;
    std::optional<std::string> critique_text;
    std::optional<std::string> stop_reason;
};

struct LoopTranscript {
    std::string sample_id;
    std::vector<Round> rounds;
    std::string final_answer;
    int reasoner_calls = 0;
    int critic_calls = 0;
};

inline json to_json(const LoopTranscript& t) {
    json rounds = json::array();
    for (const auto& r : t.rounds)
        rounds.push_back(json{{"prompt", r.prompt_text},
                              {"reply", r.reasoner_reply},
                              {"critique", r.critique_text ? json(*r.critique_text) : json()},
                              {"stop_reason", r.stop_reason ? json(*r.stop_reason) : json()}});
    return json{{"sample_id", t.sample_id}, {"rounds", rounds},
                {"final_answer", t.final_answer}, {"reasoner_calls", t.reasoner_calls},
                {"critic_calls", t.critic_calls}};
}

struct LoopConfig {
    std::string reasoner_id;
    std::optional<std::string> critic_id;  // absent: special-prompt wiring (empty critique)
    int max_iterations = 1;
    StopRule stop_rule = StopRule::fixed;
    std::string sentinel_marker = "CRITIQUE_OK";
    double eta = 1.0;
    bool nested_reflection = false;
    gw::GenParams reasoner_params = gw::GenParams::reasoner_defaults();
    gw::GenParams critic_params = gw::GenParams::reasoner_defaults();
    std::string critique_template = prompts::kCritiqueTemplate;
    std::string reflection_template = prompts::kReflectionTemplate;
    bool resend_image = true;
};

// Answer, critique, revise: one reasoner round plus up to max_iterations
// critique/revise cycles. Endpoint failures mid-loop persist the partial
// transcript with stop_reason=transport_error.
inline LoopTranscript run_loop(gw::Gateway& gateway, const LoopConfig& cfg,
                               const std::string& sample_id, const std::string& question_text,
                               const std::string& question_prompt, const std::string& image_ref) {
    LoopTranscript t;
    t.sample_id = sample_id;

    auto ask_reasoner = [&](const std::string& prompt) {
        auto msg = (image_ref.empty() || (!t.rounds.empty() && !cfg.resend_image))
                       ? gw::ChatMessage::user_text(prompt)
                       : gw::ChatMessage::user_text_image(prompt, image_ref);
        return gateway.complete_chat(cfg.reasoner_id, {msg}, cfg.reasoner_params);
    };

    PromptState state = PromptState::initial(question_prompt);
    try {
        Round r0;
        r0.prompt_text = state.text;
        r0.reasoner_reply = ask_reasoner(state.text).text;
        t.rounds.push_back(r0);

        for (int it = 0; it < cfg.max_iterations; ++it) {
            std::string critique;
            if (cfg.critic_id) {
                std::string cprompt = prompts::render_critique_prompt(
                    question_text, t.rounds.back().reasoner_reply, cfg.critique_template);
                auto msg = image_ref.empty()
                               ? gw::ChatMessage::user_text(cprompt)
                               : gw::ChatMessage::user_text_image(cprompt, image_ref);
                critique = gateway.complete_chat(*cfg.critic_id, {msg}, cfg.critic_params).text;
                ++t.critic_calls;
                t.rounds.back().critique_text = critique;
            }
            if (cfg.stop_rule == StopRule::sentinel &&
                critique.find(cfg.sentinel_marker) != std::string::npos) {
                t.rounds.back().stop_reason = "sentinel";
                break;
            }
            state = update_prompt(state, critique, cfg.eta, cfg.nested_reflection,
                                  cfg.reflection_template);
            Round r;
            r.prompt_text = state.text;
            r.reasoner_reply = ask_reasoner(state.text).text;
            t.rounds.push_back(r);
        }
    } catch (const std::exception&) {
        if (t.rounds.empty()) t.rounds.push_back(Round{state.text, "", std::nullopt, std::nullopt});
        t.rounds.back().stop_reason = "transport_error";
    }

    t.reasoner_calls = int(t.rounds.size());
    t.final_answer = t.rounds.empty() ? "" : t.rounds.back().reasoner_reply;
    return t;
}

}  // namespace criticv::loop
