#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "criticv/core.hpp"
#include "criticv/jsonl.hpp"
#include "criticv/util.hpp"

using namespace criticv;
namespace fs = std::filesystem;

namespace {
std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("criticv_core_" + name)).string();
}
}  // namespace

TEST_CASE("normalize_detail basics") {
    CHECK(core::normalize_detail("The Capital is Salem!").normalized == "the capital is salem");
    CHECK(core::normalize_detail("").normalized == "");
    CHECK(core::normalize_detail("A  dog,  a DOG.").normalized == "a dog a dog");
}

TEST_CASE("normalize_detail is idempotent and case/punctuation invariant") {
    SplitMix64 rng(13);
    const std::vector<std::string> pool = {"Salem", "river!", "1820", "Fox,", "THE", "blue-green"};
    for (int i = 0; i < 200; ++i) {
        std::string s;
        int len = rng.uniform_int(0, 6);
        for (int k = 0; k < len; ++k) s += pool[rng.uniform_int(0, int(pool.size()) - 1)] + " ";
        auto once = core::normalize_detail(s);
        CHECK(core::normalize_detail(once.normalized).normalized == once.normalized);

        std::string upper = s;
        for (auto& ch : upper) ch = char(std::toupper((unsigned char)ch));
        CHECK(core::normalize_detail(upper).normalized == once.normalized);
        CHECK(core::normalize_detail(s + "!!!").normalized == once.normalized);
    }
}

TEST_CASE("jsonl round-trip is the identity on core types") {
    SplitMix64 rng(7);
    auto rand_word = [&] {
        std::string w;
        int len = rng.uniform_int(1, 8);
        for (int i = 0; i < len; ++i) w += char('a' + rng.uniform_int(0, 25));
        return w;
    };
    auto path = temp_path("roundtrip.jsonl");

    std::vector<core::PreferencePair> pairs;
    for (int i = 0; i < 50; ++i) {
        core::PreferencePair p;
        p.question = rand_word() + " " + rand_word() + "?";
        p.image_ref = rand_word() + ".png";
        p.chosen = rand_word();
        p.rejected = rand_word();
        p.rejected_score = rng.uniform_real();
        p.margin = rng.uniform_real() + 0.05;
        p.chosen_score = p.rejected_score + p.margin;
        pairs.push_back(p);
    }
    {
        jsonl::Writer w(path);
        for (const auto& p : pairs) w.write(core::to_json(p));
    }
    auto back = jsonl::read_jsonl_as<core::PreferencePair>(path, core::preference_pair_from_json);
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(back[i].question == pairs[i].question);
        CHECK(back[i].chosen == pairs[i].chosen);
        CHECK(back[i].rejected == pairs[i].rejected);
        CHECK(back[i].chosen_score == doctest::Approx(pairs[i].chosen_score).epsilon(1e-15));
        CHECK(back[i].margin == doctest::Approx(pairs[i].margin).epsilon(1e-15));
    }
    fs::remove(path);
}

TEST_CASE("jsonl empty file and malformed line") {
    auto path = temp_path("bad.jsonl");
    {
        std::ofstream f(path);
    }
    CHECK(jsonl::read_jsonl(path).empty());

    {
        std::ofstream f(path);
        f << R"({"id":"a"})" << "\n" << R"({"id": "trunc)";
    }
    try {
        jsonl::read_jsonl(path);
        FAIL("expected JsonlError");
    } catch (const jsonl::JsonlError& e) {
        CHECK(e.line == 2);
        CHECK(e.byte_offset == 11);
    }
    fs::remove(path);
}

TEST_CASE("schema errors name the offending field") {
    core::json j{{"id", "s1"}, {"question", "q"}, {"image_ref", "i"}, {"true_answer", "a"}};
    CHECK_THROWS_WITH_AS(core::vqa_sample_from_json(j), "missing field: source", core::SchemaError);
    j["source"] = "unit";
    j["bogus"] = 1;
    CHECK_THROWS_WITH_AS(core::vqa_sample_from_json(j), "extra field: bogus", core::SchemaError);
}

TEST_CASE("fake answer invariants enforced on read") {
    core::json j{{"sample_id", "s"}, {"text", "t"},
                 {"inserted_details", core::json::array({"a", "b"})}, {"n_inserted", 3}};
    CHECK_THROWS_AS(core::fake_answer_from_json(j), core::SchemaError);
    j["n_inserted"] = 2;
    CHECK(core::fake_answer_from_json(j).n_inserted == 2);
    j["inserted_details"] = core::json::array({"a", "b", "c", "d", "e", "f"});
    j["n_inserted"] = 6;
    CHECK_THROWS_AS(core::fake_answer_from_json(j), core::SchemaError);
}

TEST_CASE("ScoredCritique final_score recomputes from stored fields") {
    SplitMix64 rng(99);
    for (int i = 0; i < 500; ++i) {
        core::ScoredCritique sc;
        sc.jaccard = rng.uniform_real();
        sc.judge_score = rng.uniform_int(0, 10);
        sc.alpha = rng.uniform_real() * 0.5;
        sc.final_score = sc.jaccard + sc.alpha * sc.judge_score;
        CHECK(std::abs(sc.recompute() - sc.final_score) < 1e-12);
    }
}
