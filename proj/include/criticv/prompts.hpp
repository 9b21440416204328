#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace criticv::prompts {

struct PromptError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    std::string needle = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = tmpl.find(needle, pos)) != std::string::npos) {
        tmpl.replace(pos, needle.size(), value);
        pos += value.size();
    }
    return tmpl;
}

// ---------------------------------------------------------------------------
// Reasoner / critic conversation templates.

inline constexpr const char* kMcqTemplate =
    "Hint: {hints}\nQuestion: {question}\nOptions: {options}\n"
    "Please select the correct answer from the options above.";

inline constexpr const char* kVqaTemplate =
    "{question}\nPlease try to answer the question with short words or phrases if possible.";

inline constexpr const char* kCritiqueTemplate =
    "#### Question\n{question}\n#### Answer\n{answer}\n#### Task\n"
    "Please provide a critique of the answer above. What are the weaknesses of the answer?";

inline constexpr const char* kReflectionTemplate =
    "Reflection on former answer:\n{critique}\n{original_question}";

inline std::string render_mcq_prompt(const std::string& hint, const std::string& question,
                                     const std::vector<std::string>& options,
                                     const std::string& tmpl = kMcqTemplate) {
    if (options.empty()) throw PromptError("MCQ prompt needs at least one option");
    if (options.size() > 26) throw PromptError("MCQ prompt supports at most 26 options (A..Z)");
    std::string joined;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i) joined += '\n';
        joined += char('A' + i);
        joined += ". ";
        joined += options[i];
    }
    std::string out = substitute(tmpl, "hints", hint.empty() ? "N/A" : hint);
    out = substitute(out, "question", question);
    return substitute(out, "options", joined);
}

inline std::string render_vqa_prompt(const std::string& question,
                                     const std::string& tmpl = kVqaTemplate) {
    if (question.empty()) throw PromptError("VQA prompt needs a non-empty question");
    return substitute(tmpl, "question", question);
}

inline std::string render_critique_prompt(const std::string& question, const std::string& answer,
                                          const std::string& tmpl = kCritiqueTemplate) {
    std::string out = substitute(tmpl, "question", question);
    return substitute(out, "answer", answer);
}

inline std::string render_reflection_prompt(const std::string& critique,
                                            const std::string& original_question_prompt,
                                            const std::string& tmpl = kReflectionTemplate) {
    std::string out = substitute(tmpl, "critique", critique);
    return substitute(out, "original_question", original_question_prompt);
}

// ---------------------------------------------------------------------------
// Data-collection templates (bug insertion, detail extraction, rubric).

inline constexpr const char* kInsertionTemplate =
    "You are given the correct answer to a visual question. Rewrite the answer so it keeps its "
    "original claims but also contains plausible-but-false details. Return only a JSON object "
    "with two fields: \"fake_answer\" (the rewritten answer) and \"inserted_details\" (the list "
    "of false details you added, one short phrase each).\n"
    "Question: {question}\n"
    "Correct answer: {answer}\n"
    "Insert exactly {n} false details.";

inline constexpr const char* kExtractAnswerTemplate =
    "List the atomic factual details stated in the following answer. Return only a JSON array "
    "of short strings, one detail per entry.\n"
    "Answer: {text}";

inline constexpr const char* kExtractCritiqueErrorsTemplate =
    "List the errors the critique identifies in the answer it reviews. Return only a JSON array "
    "of short strings, one error per entry.\n"
    "Critique: {text}";

inline constexpr const char* kRubricTemplate =
    "Evaluate the following critique of an answer that contains deliberately inserted errors.\n"
    "Inserted errors:\n{inserted}\n"
    "Answer under critique:\n{fake_answer}\n"
    "Critique under evaluation: {critique}\n"
    "Answer each criterion with Yes or No:\n"
    "1. Coverage Analysis: Did the model identify all the hallucinations mentioned in the "
    "correct answer? Are there any significant hallucinations that were missed?\n"
    "2. Accuracy Assessment: Are the detected items genuine hallucinations (true positives)? "
    "Are there any false detections (false positives)?\n"
    "3. Precision of Description: How precise and clear are the model's descriptions of the "
    "detected hallucinations? Is the explanation specific enough to understand what exactly is "
    "wrong?\n"
    "4. Overall Effectiveness: How effective is this detection compared to an ideal detection? "
    "Does it provide practical value for hallucination identification?\n"
    "Then give a brief explanation of your evaluation and, based on the scoring criteria, "
    "provide a final score from 0 to 10 on a line formatted as \"Final Score: <n>\".";

inline std::string render_insertion_prompt(const std::string& question, const std::string& answer,
                                           int n, const std::string& tmpl = kInsertionTemplate) {
    std::string out = substitute(tmpl, "question", question);
    out = substitute(out, "answer", answer);
    return substitute(out, "n", std::to_string(n));
}

inline std::string render_extraction_prompt(const std::string& text, bool critique_errors,
                                            const std::string& tmpl_override = "") {
    const std::string tmpl = !tmpl_override.empty()
                                 ? tmpl_override
                                 : (critique_errors ? kExtractCritiqueErrorsTemplate
                                                    : kExtractAnswerTemplate);
    return substitute(tmpl, "text", text);
}

inline std::string render_rubric_prompt(const std::vector<std::string>& inserted,
                                        const std::string& fake_answer,
                                        const std::string& critique,
                                        const std::string& tmpl = kRubricTemplate) {
    std::string bullets;
    for (const auto& d : inserted) bullets += "- " + d + "\n";
    if (!bullets.empty()) bullets.pop_back();
    std::string out = substitute(tmpl, "inserted", bullets);
    out = substitute(out, "fake_answer", fake_answer);
    return substitute(out, "critique", critique);
}

}  // namespace criticv::prompts
