#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "criticv/mock_server.hpp"
#include "criticv/vest.hpp"

using namespace criticv;
using json = nlohmann::json;

namespace {

struct MockFixture {
    mock::MockServer server;
    gw::Gateway gateway;

    explicit MockFixture(std::vector<mock::MockRule> rules) {
        server.set_rules(std::move(rules));
        server.start();
        gw::EndpointConfig judge;
        judge.id = "judge";
        judge.base_url = server.base_url();
        judge.model = "judge-model";
        judge.backoff_base_ms = 0;
        gateway.add_endpoint(judge);
        gw::EndpointConfig critic = judge;
        critic.id = "critic";
        critic.model = "critic-model";
        gateway.add_endpoint(critic);
    }
};

core::VqaSample oregon_sample() {
    core::VqaSample s;
    s.id = "s1";
    s.question = "What is the capital of Oregon?";
    s.image_ref = "";
    s.true_answer = "The capital of Oregon is Salem";
    s.source = "unit";
    return s;
}

mock::MockRule true_answer_extraction_rule() {
    return mock::MockRule{.contains = "Answer: The capital of Oregon is Salem",
                          .reply = R"(["the capital of oregon is salem"])"};
}

}  // namespace

TEST_CASE("extract_json_value finds JSON wrapped in prose") {
    auto obj = vest::extract_json_value("Sure! Here you go: {\"a\": {\"b\": 1}} hope it helps",
                                        '{', '}');
    REQUIRE(obj);
    CHECK((*obj)["a"]["b"] == 1);
    auto arr = vest::extract_json_value("list: [1, 2, 3].", '[', ']');
    REQUIRE(arr);
    CHECK(arr->size() == 3);
    CHECK(!vest::extract_json_value("no json here", '{', '}'));
    // unbalanced prefix before a valid object
    auto messy = vest::extract_json_value("{broken {\"k\": [\"v\"]}", '{', '}');
    REQUIRE(messy);
    CHECK((*messy)["k"][0] == "v");
}

TEST_CASE("insert_fake_details with a scripted judge") {
    json reply{{"fake_answer", "The capital of Oregon is Salem, founded in 1820."},
               {"inserted_details", json::array({"founded in 1820"})}};
    MockFixture fx({true_answer_extraction_rule(),
                    mock::MockRule{.contains = "Insert exactly 1", .reply = reply.dump()}});

    SplitMix64 rng(42);
    auto res = vest::insert_fake_details(fx.gateway, "judge", oregon_sample(), 1, rng);
    CHECK(res.fake_answer.n_inserted == 1);
    REQUIRE(res.fake_answer.inserted_details.size() == 1);
    CHECK(res.fake_answer.inserted_details[0].normalized == "founded in 1820");
    CHECK(res.fake_answer.text.find("founded in 1820") != std::string::npos);
    CHECK(res.parse_attempts == 1);
}

TEST_CASE("omitted n is drawn deterministically from the seeded rng") {
    std::vector<mock::MockRule> rules = {true_answer_extraction_rule()};
    for (int n = 1; n <= 5; ++n) {
        json reply{{"fake_answer", "fake"}, {"inserted_details", json::array()}};
        for (int i = 0; i < n; ++i)
            reply["inserted_details"].push_back("bogus detail " + std::to_string(n * 10 + i));
        rules.push_back(mock::MockRule{.contains = "Insert exactly " + std::to_string(n),
                                       .reply = reply.dump()});
    }
    MockFixture fx(rules);

    auto draw = [&](std::uint64_t seed) {
        SplitMix64 rng(seed);
        return vest::insert_fake_details(fx.gateway, "judge", oregon_sample(), std::nullopt, rng)
            .fake_answer.n_inserted;
    };
    int first = draw(42);
    CHECK(draw(42) == first);
    CHECK(first >= 1);
    CHECK(first <= 5);
}

TEST_CASE("unparsable judge replies fail after the attempt budget") {
    MockFixture fx({true_answer_extraction_rule()});
    fx.server.set_fallback("free prose with no structure at all");
    SplitMix64 rng(1);
    try {
        vest::insert_fake_details(fx.gateway, "judge", oregon_sample(), 2, rng);
        FAIL("expected VestError");
    } catch (const vest::VestError& e) {
        CHECK(e.parse_attempts == 3);
    }
}

TEST_CASE("inserted details overlapping the true answer fail after one re-prompt") {
    json overlap{{"fake_answer", "The capital of Oregon is Salem"},
                 {"inserted_details", json::array({"the capital of oregon is salem"})}};
    MockFixture fx({true_answer_extraction_rule(),
                    mock::MockRule{.contains = "Insert exactly 1", .reply = overlap.dump()}});
    SplitMix64 rng(1);
    CHECK_THROWS_AS(vest::insert_fake_details(fx.gateway, "judge", oregon_sample(), 1, rng),
                    vest::VestError);
}

TEST_CASE("extract_details preserves order and dedups post-normalization") {
    MockFixture fx({mock::MockRule{
        .contains = "Answer: twice",
        .reply = R"(["Salem is the capital", "It sits on the Willamette", "salem IS the capital!"])"}});
    auto out = vest::extract_details(fx.gateway, "judge", "twice", false);
    REQUIRE(out.size() == 2);
    CHECK(out[0].normalized == "salem is the capital");
    CHECK(out[1].normalized == "it sits on the willamette");
}

TEST_CASE("extract_details on an empty-ish answer yields an empty list") {
    MockFixture fx({mock::MockRule{.contains = "Answer: .", .reply = "[]"}});
    CHECK(vest::extract_details(fx.gateway, "judge", ".", false).empty());
}

TEST_CASE("collect_critique fills the critique template and extracts claimed errors") {
    MockFixture fx({
        mock::MockRule{.contains = "#### Task",
                       .model = "critic-model",
                       .reply = "The claim 'founded in 1820' is fabricated."},
        mock::MockRule{.contains = "Critique: The claim 'founded in 1820' is fabricated.",
                       .reply = R"(["founded in 1820"])"},
    });
    auto sample = oregon_sample();
    core::FakeAnswer fake;
    fake.sample_id = sample.id;
    fake.text = "The capital of Oregon is Salem, founded in 1820.";
    fake.inserted_details = {core::normalize_detail("founded in 1820")};
    fake.n_inserted = 1;

    auto rec = vest::collect_critique(fx.gateway, "critic", "judge", sample, fake);
    CHECK(rec.sample_id == "s1");
    CHECK(rec.critic_model == "critic");
    REQUIRE(rec.detected_details.size() == 1);
    CHECK(rec.detected_details[0].normalized == "founded in 1820");
    CHECK(rec.token_count == whitespace_token_count(rec.critique_text));
    CHECK(rec.token_count_method == core::TokenCountMethod::whitespace);
}
