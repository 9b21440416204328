#pragma once

#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "criticv/util.hpp"

namespace criticv::core {

using json = nlohmann::json;

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One atomic factual claim. `normalized` is a pure function of `text`:
// lowercase, punctuation stripped, whitespace collapsed. Non-ASCII bytes are
// kept verbatim so UTF-8 content survives untouched.
struct ErrorDetail {
    std::string text;
    std::string normalized;

    bool operator==(const ErrorDetail&) const = default;
};

inline std::vector<std::string> normalize_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            cur += char(std::tolower(c));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

inline ErrorDetail normalize_detail(const std::string& text) {
    std::string norm;
    for (const auto& t : normalize_tokens(text)) {
        if (!norm.empty()) norm += ' ';
        norm += t;
    }
    return ErrorDetail{text, norm};
}

struct VqaSample {
    std::string id;
    std::string question;
    std::string image_ref;
    std::string true_answer;
    std::string source;
};

// Degraded answer plus the set G of details that were inserted into it.
struct FakeAnswer {
    std::string sample_id;
    std::string text;
    std::vector<ErrorDetail> inserted_details;
    int n_inserted = 0;
};

enum class TokenCountMethod { reported, whitespace };

inline std::string to_string(TokenCountMethod m) {
    return m == TokenCountMethod::reported ? "reported" : "whitespace";
}

inline TokenCountMethod token_count_method_from_string(const std::string& s) {
    if (s == "reported") return TokenCountMethod::reported;
    if (s == "whitespace") return TokenCountMethod::whitespace;
    throw SchemaError("unknown token_count_method: " + s);
}

struct CritiqueRecord {
    std::string sample_id;
    std::string critic_model;
    std::string critique_text;
    std::vector<ErrorDetail> detected_details;
    int token_count = 0;
    TokenCountMethod token_count_method = TokenCountMethod::whitespace;
};

struct ScoredCritique {
    CritiqueRecord critique;
    double jaccard = 0.0;
    int judge_score = 0;
    double alpha = 0.1;
    double final_score = 0.0;

    double recompute() const { return jaccard + alpha * judge_score; }
};

struct PreferencePair {
    std::string question;
    std::string image_ref;
    std::string chosen;
    std::string rejected;
    double chosen_score = 0.0;
    double rejected_score = 0.0;
    double margin = 0.0;
};

// ---------------------------------------------------------------------------
// JSON (de)serialization, field names bit-exact per the file schemas.
// Parsing is strict: a missing or extra field is a SchemaError naming it.

inline void check_fields(const json& j, const std::vector<std::string>& required,
                         const std::vector<std::string>& optional = {}) {
    if (!j.is_object()) throw SchemaError("record is not a JSON object");
    for (const auto& f : required)
        if (!j.contains(f)) throw SchemaError("missing field: " + f);
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        bool known = false;
        for (const auto& f : required) known = known || f == k;
        for (const auto& f : optional) known = known || f == k;
        if (!known) throw SchemaError("extra field: " + k);
    }
}

inline json to_json(const VqaSample& s) {
    return json{{"id", s.id},
                {"question", s.question},
                {"image_ref", s.image_ref},
                {"true_answer", s.true_answer},
                {"source", s.source}};
}

inline VqaSample vqa_sample_from_json(const json& j) {
    check_fields(j, {"id", "question", "image_ref", "true_answer", "source"});
    VqaSample s{j.at("id"), j.at("question"), j.at("image_ref"), j.at("true_answer"), j.at("source")};
    if (s.id.empty()) throw SchemaError("field id must be non-empty");
    if (s.question.empty()) throw SchemaError("field question must be non-empty");
    if (s.true_answer.empty()) throw SchemaError("field true_answer must be non-empty");
    return s;
}

inline json to_json(const FakeAnswer& f) {
    json det = json::array();
    for (const auto& d : f.inserted_details) det.push_back(d.text);
    return json{{"sample_id", f.sample_id},
                {"text", f.text},
                {"inserted_details", det},
                {"n_inserted", f.n_inserted}};
}

inline FakeAnswer fake_answer_from_json(const json& j) {
    check_fields(j, {"sample_id", "text", "inserted_details", "n_inserted"});
    FakeAnswer f;
    f.sample_id = j.at("sample_id");
    f.text = j.at("text");
    for (const auto& d : j.at("inserted_details")) f.inserted_details.push_back(normalize_detail(d));
    f.n_inserted = j.at("n_inserted");
    if (f.n_inserted != int(f.inserted_details.size()))
        throw SchemaError("n_inserted does not match inserted_details length");
    if (f.n_inserted < 1 || f.n_inserted > 5) throw SchemaError("n_inserted out of range [1,5]");
    return f;
}

inline json to_json(const CritiqueRecord& c) {
    json det = json::array();
    for (const auto& d : c.detected_details) det.push_back(d.text);
    return json{{"sample_id", c.sample_id},
                {"critic_model", c.critic_model},
                {"critique_text", c.critique_text},
                {"detected_details", det},
                {"token_count", c.token_count},
                {"token_count_method", to_string(c.token_count_method)}};
}

inline CritiqueRecord critique_record_from_json(const json& j) {
    check_fields(j, {"sample_id", "critic_model", "critique_text", "detected_details",
                     "token_count", "token_count_method"});
    CritiqueRecord c;
    c.sample_id = j.at("sample_id");
    c.critic_model = j.at("critic_model");
    c.critique_text = j.at("critique_text");
    for (const auto& d : j.at("detected_details")) c.detected_details.push_back(normalize_detail(d));
    c.token_count = j.at("token_count");
    c.token_count_method = token_count_method_from_string(j.at("token_count_method"));
    if (c.token_count < 0) throw SchemaError("token_count must be >= 0");
    return c;
}

inline json to_json(const PreferencePair& p) {
    return json{{"question", p.question},
                {"image_ref", p.image_ref},
                {"chosen", p.chosen},
                {"rejected", p.rejected},
                {"chosen_score", p.chosen_score},
                {"rejected_score", p.rejected_score},
                {"margin", p.margin}};
}

inline PreferencePair preference_pair_from_json(const json& j) {
    check_fields(j, {"question", "image_ref", "chosen", "rejected", "chosen_score",
                     "rejected_score", "margin"});
    PreferencePair p{j.at("question"),     j.at("image_ref"),      j.at("chosen"),
                     j.at("rejected"),     j.at("chosen_score"),   j.at("rejected_score"),
                     j.at("margin")};
    if (!(p.margin > 0)) throw SchemaError("margin must be > 0");
    return p;
}

}  // namespace criticv::core
