#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "criticv/loop.hpp"
#include "criticv/mock_server.hpp"
#include "criticv/prompts.hpp"

using namespace criticv;

namespace {

std::string read_fixture(const std::string& name) {
    std::ifstream f(std::string(FIXTURES_DIR) + "/prompts/" + name);
    REQUIRE(f.good());
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

const std::string kVqaQuestion = "What color is the car?";

struct LoopFixture {
    mock::MockServer server;
    gw::Gateway gateway;

    explicit LoopFixture(std::vector<mock::MockRule> rules) {
        server.set_rules(std::move(rules));
        server.start();
        for (const std::string& id : {"reasoner", "critic"}) {
            gw::EndpointConfig e;
            e.id = id;
            e.base_url = server.base_url();
            e.model = id + "-model";
            e.backoff_base_ms = 0;
            gateway.add_endpoint(e);
        }
    }
};

}  // namespace

TEST_CASE("rendered prompts match the golden files byte for byte") {
    CHECK(prompts::render_mcq_prompt("", "What is the capital of Oregon?",
                                     {"Portland", "Salem"}) == read_fixture("mcq.txt"));
    CHECK(prompts::render_vqa_prompt(kVqaQuestion) == read_fixture("vqa.txt"));
    CHECK(prompts::render_critique_prompt(kVqaQuestion, "The car is red.") ==
          read_fixture("critique.txt"));
    CHECK(prompts::render_reflection_prompt("The answer ignores the second car.",
                                            prompts::render_vqa_prompt(kVqaQuestion)) ==
          read_fixture("reflection.txt"));
}

TEST_CASE("shipped template files agree with the compiled-in defaults") {
    auto read_share = [](const std::string& name) {
        std::ifstream f(std::string(SHARE_DIR) + "/prompts/" + name);
        REQUIRE(f.good());
        std::ostringstream out;
        out << f.rdbuf();
        return out.str();
    };
    CHECK(read_share("mcq.txt") == prompts::kMcqTemplate);
    CHECK(read_share("vqa.txt") == prompts::kVqaTemplate);
    CHECK(read_share("critique.txt") == prompts::kCritiqueTemplate);
    CHECK(read_share("reflection.txt") == prompts::kReflectionTemplate);
    CHECK(read_share("insertion.txt") == prompts::kInsertionTemplate);
    CHECK(read_share("extract_answer.txt") == prompts::kExtractAnswerTemplate);
    CHECK(read_share("extract_critique_errors.txt") == prompts::kExtractCritiqueErrorsTemplate);
    CHECK(read_share("rubric.txt") == prompts::kRubricTemplate);
}

TEST_CASE("prompt rendering rejects bad inputs") {
    CHECK_THROWS_AS(prompts::render_mcq_prompt("hint", "q", {}), prompts::PromptError);
    CHECK_THROWS_AS(prompts::render_mcq_prompt("hint", "q", std::vector<std::string>(27, "x")),
                    prompts::PromptError);
    CHECK_THROWS_AS(prompts::render_vqa_prompt(""), prompts::PromptError);
    // a present-but-blank hint string still renders as N/A
    CHECK(prompts::render_mcq_prompt("", "q", {"a"}).rfind("Hint: N/A\n", 0) == 0);
    CHECK(prompts::render_mcq_prompt("look left", "q", {"a"}).rfind("Hint: look left\n", 0) == 0);
}

TEST_CASE("update_prompt concatenates the critique verbatim at eta = 1") {
    auto state = loop::PromptState::initial(prompts::render_vqa_prompt(kVqaQuestion));
    auto next = loop::update_prompt(state, "The answer ignores the second car.");
    CHECK(next.text == read_fixture("reflection.txt"));
    CHECK(next.iteration == 1);
    REQUIRE(next.history.size() == 1);
    CHECK(next.history[0] == "The answer ignores the second car.");
    CHECK(next.original_prompt == state.original_prompt);
    // the full critique appears verbatim as a substring
    CHECK(next.text.find("The answer ignores the second car.") != std::string::npos);
}

TEST_CASE("update_prompt eta scaling and nesting") {
    auto state = loop::PromptState::initial("Q");
    std::string critique = "0123456789";

    auto half = loop::update_prompt(state, critique, 0.5);
    CHECK(half.history[0] == "01234");
    auto none = loop::update_prompt(state, critique, 0.0);
    CHECK(none.history[0].empty());
    CHECK(none.text == "Reflection on former answer:\n\nQ");

    // default: a second update wraps the original prompt again
    auto twice = loop::update_prompt(half, "later critique");
    CHECK(twice.text == "Reflection on former answer:\nlater critique\nQ");
    CHECK(twice.iteration == 2);
    REQUIRE(twice.history.size() == 2);

    // nested: the second update wraps the previous reflection prompt
    auto nested = loop::update_prompt(half, "later critique", 1.0, true);
    CHECK(nested.text ==
          "Reflection on former answer:\nlater critique\n" + half.text);
}

TEST_CASE("one critique iteration makes 2 reasoner calls and 1 critic call") {
    LoopFixture fx({
        mock::MockRule{.contains = "Reflection on former answer", .reply = "blue"},
        mock::MockRule{.contains = "#### Task", .reply = "The car is actually blue, not red."},
        mock::MockRule{.contains = "What color", .reply = "red"},
    });
    loop::LoopConfig cfg;
    cfg.reasoner_id = "reasoner";
    cfg.critic_id = "critic";
    cfg.max_iterations = 1;

    auto t = loop::run_loop(fx.gateway, cfg, "s1", kVqaQuestion,
                            prompts::render_vqa_prompt(kVqaQuestion), "");
    CHECK(t.reasoner_calls == 2);
    CHECK(t.critic_calls == 1);
    REQUIRE(t.rounds.size() == 2);
    CHECK(t.rounds[0].reasoner_reply == "red");
    REQUIRE(t.rounds[0].critique_text);
    CHECK(*t.rounds[0].critique_text == "The car is actually blue, not red.");
    // the critique is embedded verbatim in the round-2 prompt
    CHECK(t.rounds[1].prompt_text.find("The car is actually blue, not red.") != std::string::npos);
    CHECK(t.final_answer == "blue");
    CHECK(fx.server.request_count() == 3);

    auto j = loop::to_json(t);
    CHECK(j["reasoner_calls"] == 2);
    CHECK(j["critic_calls"] == 1);
    CHECK(j["rounds"][1]["critique"].is_null());
    CHECK(j["final_answer"] == "blue");
}

TEST_CASE("three iterations make 4 reasoner calls and 3 critic calls") {
    LoopFixture fx({
        mock::MockRule{.contains = "#### Task", .reply = "still wrong"},
        mock::MockRule{.contains = "What color", .reply = "red"},
    });
    loop::LoopConfig cfg;
    cfg.reasoner_id = "reasoner";
    cfg.critic_id = "critic";
    cfg.max_iterations = 3;

    auto t = loop::run_loop(fx.gateway, cfg, "s1", kVqaQuestion,
                            prompts::render_vqa_prompt(kVqaQuestion), "");
    CHECK(t.reasoner_calls == 4);
    CHECK(t.critic_calls == 3);
    CHECK(t.rounds.size() == 4);
}

TEST_CASE("sentinel critique stops the loop early") {
    LoopFixture fx({
        mock::MockRule{.contains = "#### Task", .reply = "Looks right. CRITIQUE_OK"},
        mock::MockRule{.contains = "What color", .reply = "red"},
    });
    loop::LoopConfig cfg;
    cfg.reasoner_id = "reasoner";
    cfg.critic_id = "critic";
    cfg.max_iterations = 5;
    cfg.stop_rule = loop::StopRule::sentinel;

    auto t = loop::run_loop(fx.gateway, cfg, "s1", kVqaQuestion,
                            prompts::render_vqa_prompt(kVqaQuestion), "");
    CHECK(t.reasoner_calls == 1);
    CHECK(t.critic_calls == 1);
    REQUIRE(t.rounds.size() == 1);
    CHECK(t.rounds[0].stop_reason == "sentinel");
    CHECK(t.final_answer == "red");
}

TEST_CASE("no critic endpoint means zero critic calls and null critiques") {
    LoopFixture fx({
        mock::MockRule{.contains = "Reflection on former answer", .reply = "second thoughts"},
        mock::MockRule{.contains = "What color", .reply = "red"},
    });
    loop::LoopConfig cfg;
    cfg.reasoner_id = "reasoner";
    cfg.max_iterations = 1;

    auto t = loop::run_loop(fx.gateway, cfg, "s1", kVqaQuestion,
                            prompts::render_vqa_prompt(kVqaQuestion), "");
    CHECK(t.reasoner_calls == 2);
    CHECK(t.critic_calls == 0);
    CHECK(!t.rounds[0].critique_text);
}

TEST_CASE("mid-loop endpoint failure persists a partial transcript") {
    LoopFixture fx({mock::MockRule{.contains = "What color", .reply = "red"}});
    gw::EndpointConfig dead;
    dead.id = "dead";
    dead.base_url = "http://127.0.0.1:1";
    dead.model = "m";
    dead.max_attempts = 1;
    dead.backoff_base_ms = 0;
    fx.gateway.add_endpoint(dead);

    loop::LoopConfig cfg;
    cfg.reasoner_id = "reasoner";
    cfg.critic_id = "dead";
    cfg.max_iterations = 2;

    auto t = loop::run_loop(fx.gateway, cfg, "s1", kVqaQuestion,
                            prompts::render_vqa_prompt(kVqaQuestion), "");
    REQUIRE(t.rounds.size() == 1);
    CHECK(t.rounds[0].reasoner_reply == "red");
    CHECK(t.rounds[0].stop_reason == "transport_error");
    CHECK(t.reasoner_calls == 1);
    CHECK(t.critic_calls == 0);
}
