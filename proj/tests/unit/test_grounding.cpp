#include <doctest.h>

#include "judges.hpp"
#include "pcev/errors.hpp"
#include "pcev/grounding.hpp"

using namespace pcev;

namespace {

std::vector<std::string> sentences(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("Fact " + std::to_string(i) + " holds.");
  return out;
}

bool in_chunk(const std::string& context, std::size_t first_fact) {
  return context.rfind("Fact " + std::to_string(first_fact) + " holds.", 0) == 0;
}

}  // namespace

TEST_SUITE("grounding") {
  TEST_CASE("max over chunks, mean over claims, first claim") {
    // Claim A: False on chunk 0, True on chunk 1. Claim B: False on both.
    auto judge = judges::scripted({"A", "B"}, [](const std::string& st, const std::string& ctx) {
      return st == "A" && in_chunk(ctx, 10) ? "True" : "False";
    });
    const auto r = grounding_score("Some response.", sentences(15), judge);
    REQUIRE(r.verdicts.size() == 2);
    CHECK(r.verdicts[0].per_chunk == std::vector<bool>{false, true});
    CHECK(r.verdicts[1].per_chunk == std::vector<bool>{false, false});
    CHECK(r.verdicts[0].score == 1.0);
    CHECK(r.verdicts[1].score == 0.0);
    CHECK(r.avg_score == 0.5);
    CHECK(r.first_claim_score == 1.0);
    CHECK(r.n_claims == 2);
  }

  TEST_CASE("first claim false, later claims true") {
    auto judge = judges::scripted({"A", "B", "C"}, [](const std::string& st, const std::string&) {
      return st == "A" ? "False." : "true";
    });
    const auto r = grounding_score("x", sentences(3), judge);
    CHECK(r.first_claim_score == 0.0);
    CHECK(*r.avg_score == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("whitespace-only responses are excluded") {
    int calls = 0;
    ScriptedJudge judge([&](const std::string&) {
      ++calls;
      return std::string("- x");
    });
    const auto r = grounding_score(" \n\t ", sentences(3), judge);
    CHECK(r.excluded_empty);
    CHECK_FALSE(r.avg_score.has_value());
    CHECK_FALSE(r.first_claim_score.has_value());
    CHECK(calls == 0);
  }

  TEST_CASE("chunking") {
    const auto c = chunk_context(sentences(25));
    REQUIRE(c.size() == 3);
    CHECK(c[0].sentences.size() == 10);
    CHECK(c[1].sentences.size() == 10);
    CHECK(c[2].sentences.size() == 5);
    CHECK(c[2].chunk_index == 2);
    CHECK(c[1].sentences.front() == "Fact 10 holds.");
    CHECK(c[0].text().rfind("Fact 0 holds. Fact 1 holds.", 0) == 0);
    const auto overlapped = chunk_context(sentences(25), 10, 5);
    CHECK(overlapped.size() == 4);
    CHECK(overlapped[1].sentences.front() == "Fact 5 holds.");
    CHECK(chunk_context(sentences(4)).size() == 1);
    CHECK_THROWS_AS(chunk_context(sentences(0)), InvalidArgument);
    CHECK_THROWS_AS(chunk_context(sentences(5), 3, 3), InvalidArgument);
  }

  TEST_CASE("claims parsing") {
    const auto c = parse_claims("Claims:\n- One thing.\nnoise\n- Another.\n");
    REQUIRE(c.size() == 2);
    CHECK(c[0].text == "One thing.");
    CHECK(c[1].index == 1);
    try {
      parse_claims("no claims here");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.raw() == "no claims here");
    }
  }

  TEST_CASE("verdict parsing") {
    CHECK(parse_verdict("True").value);
    CHECK(parse_verdict("  **true**, because").value);
    CHECK(parse_verdict("FALSE").parsed);
    CHECK_FALSE(parse_verdict("FALSE").value);
    CHECK_FALSE(parse_verdict("Maybe").parsed);
    CHECK_FALSE(parse_verdict("").parsed);
  }

  TEST_CASE("unparseable verdicts count as false") {
    auto judge = judges::scripted({"A"}, [](auto&, auto&) { return "I cannot tell"; });
    const auto r = grounding_score("x", sentences(12), judge);
    CHECK(r.avg_score == 0.0);
    CHECK(r.unparseable_verdicts == 2);
  }

  TEST_CASE("graded verdicts take the max score") {
    auto judge = judges::scripted({"A"}, [](auto&, const std::string& ctx) {
      return in_chunk(ctx, 0) ? "0.25" : "0.75";
    });
    GroundingOptions opts;
    opts.graded = true;
    const auto r = grounding_score("x", sentences(12), judge, opts);
    CHECK(r.avg_score == 0.75);
    CHECK(r.verdicts[0].per_chunk_score == std::vector<double>{0.25, 0.75});
  }

  TEST_CASE("a failing claim is dropped and logged") {
    auto judge = judges::scripted({"A", "B"}, [](const std::string& st, auto&) -> std::string {
      if (st == "B") throw ServiceError("down", true);
      return "True";
    });
    const auto r = grounding_score("x", sentences(3), judge);
    CHECK(r.failed_claims == 1);
    CHECK(r.avg_score == 1.0);
    CHECK(r.claim_errors.size() == 1);
  }

  TEST_CASE("verification prompt carries the chunk and the claim") {
    std::vector<std::string> log;
    auto judge = judges::scripted({"Claim one."}, [](auto&, auto&) { return "True"; }, &log);
    grounding_score("x", sentences(2), judge);
    REQUIRE(log.size() == 2);
    CHECK(log[1].find("Context: Fact 0 holds. Fact 1 holds. Statement: Claim one.") != std::string::npos);
  }
}
