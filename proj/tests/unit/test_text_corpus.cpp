#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "pcev/corpus.hpp"
#include "pcev/errors.hpp"
#include "pcev/text.hpp"

using namespace pcev;

namespace {

std::string strip_ws(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

LoadResult parse(const std::string& jsonl, TaskKind kind, TaskRules rules = {}) {
  std::istringstream in(jsonl);
  return parse_dataset(in, kind, rules);
}

}  // namespace

TEST_SUITE("text") {
  TEST_CASE("sentence splitter on terminal punctuation") {
    CHECK(split_sentences("A. B! C?") == std::vector<std::string>{"A.", "B!", "C?"});
    CHECK(split_sentences("He met Dr. Smith. Then he left.") ==
          std::vector<std::string>{"He met Dr. Smith.", "Then he left."});
    CHECK(split_sentences("See Fig. 3 for details. It helps.").size() == 2);
    CHECK(split_sentences("e.g. this stays. One more.").size() == 2);
    CHECK(split_sentences("\"Stop!\" She ran. 1983 was a year.") ==
          std::vector<std::string>{"\"Stop!\"", "She ran.", "1983 was a year."});
    CHECK(split_sentences("lower. case stays together").size() == 1);
    CHECK(split_sentences("   ").empty());
  }

  TEST_CASE("sentence spans are trimmed and point into the source") {
    const std::string text = "  First one.   Second one!  ";
    const auto spans = split_sentence_spans(text);
    REQUIRE(spans.size() == 2);
    CHECK(text.substr(spans[0].begin, spans[0].end - spans[0].begin) == "First one.");
    CHECK(text.substr(spans[1].begin, spans[1].end - spans[1].begin) == "Second one!");
  }

  TEST_CASE("approx tokenizer splits words and punctuation") {
    ApproxTokenizer tok;
    const auto t = tok.tokenize("Hello, world! 42x");
    std::vector<std::string> words;
    for (const auto& x : t) words.push_back(x.text);
    CHECK(words == std::vector<std::string>{"Hello", ",", "world", "!", "42x"});
    CHECK(t[2].begin == 7);
    CHECK(t[2].end == 12);
    CHECK(tok.count("") == 0);
  }

  TEST_CASE("render_subsequence re-tokenizes to the kept tokens") {
    ApproxTokenizer tok;
    std::mt19937_64 rng(5);
    const std::string text = "The quick, brown fox (jumps) over 12 lazy dogs; really!";
    const auto tokens = tok.tokenize(text);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (rng() % 2) keep.push_back(i);
      }
      const std::string out = render_subsequence(text, tokens, keep);
      const auto again = tok.tokenize(out);
      REQUIRE(again.size() == keep.size());
      for (std::size_t k = 0; k < keep.size(); ++k) CHECK(again[k].text == tokens[keep[k]].text);
    }
  }

  TEST_CASE("truncation keeps whole tokens") {
    ApproxTokenizer tok;
    CHECK(truncate_to_tokens("one two, three", tok, 2) == "one two");
    CHECK(truncate_to_tokens("one two, three", tok, 3) == "one two,");
    CHECK(truncate_to_tokens("one two", tok, 10) == "one two");
    CHECK(truncate_to_tokens("one two", tok, 0).empty());
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("well-formed JSONL loads every record") {
    const std::string jsonl =
        R"({"id":"a","documents":[{"id":"d1","paragraphs":["P one."]}],"question":"Q?","references":["x"]})"
        "\n"
        R"({"id":"b","documents":[{"id":"d1","paragraphs":["P two."]}],"question":"Q?","references":["y"]})"
        "\n"
        R"({"id":"c","documents":[{"id":"d1","paragraphs":["P three."]}],"question":"Q?","references":["z"]})"
        "\n";
    const auto r = parse(jsonl, TaskKind::rc_qa);
    CHECK(r.samples.size() == 3);
    CHECK(r.skipped.empty());
  }

  TEST_CASE("schema violations are skipped and reported") {
    const std::string jsonl =
        R"({"id":"a","documents":[{"id":"d1","paragraphs":["P."]}],"question":"Q?"})"
        "\n"
        R"({"id":"b","documents":[{"id":"d1","paragraphs":["P."]}],"question":"Q?","references":["y"]})"
        "\n"
        "not json\n"
        R"({"id":"c","documents":[{"id":"d1","paragraphs:":["P."]}],"question":"Q?","references":["y"]})"
        "\n"
        R"({"id":"d","documents":[{"id":"d1","paragraphs":["  "]}],"question":"Q?","references":["y"]})"
        "\n"
        R"({"id":"e","documents":[{"id":"d1","paragraphs":["P."]}],"question":"Q?","references":["y"],"supporting_doc_ids":["d9"]})"
        "\n";
    const auto r = parse(jsonl, TaskKind::rc_qa);
    REQUIRE(r.samples.size() == 1);
    CHECK(r.samples[0].id == "b");
    REQUIRE(r.skipped.size() == 5);
    CHECK(r.skipped[0].id == "a");
    CHECK(r.skipped[0].line == 1);
    CHECK(r.skipped[0].reason.find("references") != std::string::npos);
    const auto report = r.error_report("x.jsonl");
    CHECK(report["n_valid"] == 1);
    CHECK(report["n_invalid"] == 5);
  }

  TEST_CASE("task kind decides the mandatory fields") {
    const std::string no_turns =
        R"({"id":"a","documents":[{"id":"d1","paragraphs":["P."]}],"question":"Q?","references":["x"]})";
    CHECK(parse(no_turns, TaskKind::conversational_qa).skipped.size() == 1);
    CHECK(parse(no_turns, TaskKind::math_reasoning).skipped.size() == 1);
    const std::string math = R"({"id":"m","icl_demos":["Q: 1+1 A: 2"],"question":"2+2?","references":["4"]})";
    CHECK(parse(math, TaskKind::math_reasoning).samples.size() == 1);
    const std::string summ = R"({"id":"s","documents":[{"id":"d1","paragraphs":["P."]}],"references":["sum"]})";
    CHECK(parse(summ, TaskKind::long_doc_summ).samples.size() == 1);
  }

  TEST_CASE("conversational target turn: the fourth question is asked") {
    std::string turns;
    for (int i = 1; i <= 6; ++i) {
      if (i > 1) turns += ",";
      turns += R"({"question":"q)" + std::to_string(i) + R"(","answer":"a)" + std::to_string(i) + "\"}";
    }
    const std::string rec =
        R"({"id":"c","documents":[{"id":"d1","paragraphs":["P."]}],"turns":[)" + turns + "]}";
    TaskRules rules;
    rules.min_turns = 4;
    rules.target_turn_index = 3;
    const auto r = parse(rec, TaskKind::conversational_qa, rules);
    REQUIRE(r.samples.size() == 1);
    const auto& s = r.samples[0];
    CHECK(s.question == "q4");
    CHECK(s.references == std::vector<std::string>{"a4"});
    REQUIRE(s.prior_turns().size() == 3);
    CHECK(s.prior_turns()[2].question == "q3");
  }

  TEST_CASE("target turn index must be below min_turns") {
    TaskRules rules;
    rules.min_turns = 3;
    rules.target_turn_index = 3;
    CHECK_THROWS_AS(rules.validate(), InvalidArgument);
    CHECK(rules.sample_seed == 42);
  }

  TEST_CASE("sentence cap keeps the first 50 of 124 sentences") {
    std::vector<std::string> paragraphs;
    for (int p = 0; p < 4; ++p) {
      std::string para;
      for (int k = 0; k < 31; ++k) para += "Sentence " + std::to_string(p * 31 + k) + " here. ";
      paragraphs.push_back(para);
    }
    auto s = fixtures::make_sample("long", {paragraphs});
    REQUIRE(s.context_sentences().size() == 124);
    TaskRules rules;
    rules.max_context_sentences = 50;
    const auto out = apply_task_rules({s}, rules);
    const auto sentences = out[0].context_sentences();
    REQUIRE(sentences.size() == 50);
    CHECK(sentences.front() == "Sentence 0 here.");
    CHECK(sentences.back() == "Sentence 49 here.");
  }

  TEST_CASE("min_turns drops short conversations") {
    Sample s = fixtures::make_sample("c", {{"P."}});
    s.turns = {{"q1", "a1"}, {"q2", "a2"}, {"q3", "a3"}};
    TaskRules rules;
    rules.min_turns = 4;
    CHECK(apply_task_rules({s}, rules).empty());
  }

  TEST_CASE("keep_only_supporting keeps the supporting documents") {
    Sample s = fixtures::make_sample("h", {{"One."}, {"Two."}, {"Three."}});
    s.supporting_doc_ids = std::vector<std::string>{"d2"};
    TaskRules rules;
    rules.keep_only_supporting = true;
    const auto out = apply_task_rules({s}, rules);
    REQUIRE(out[0].documents.size() == 1);
    CHECK(out[0].documents[0].id == "d2");
  }

  TEST_CASE("apply_task_rules is idempotent") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::vector<std::string>> docs(1 + rng() % 3);
      for (auto& d : docs) {
        for (std::size_t p = 0; p < 1 + rng() % 3; ++p) d.push_back(fixtures::numbered_text(5 + rng() % 40, 4));
      }
      Sample s = fixtures::make_sample("s", docs);
      s.supporting_doc_ids = std::vector<std::string>{"d1"};
      TaskRules rules;
      rules.max_context_sentences = 1 + rng() % 8;
      rules.keep_only_supporting = rng() % 2;
      const auto once = apply_task_rules({s}, rules);
      const auto twice = apply_task_rules(once, rules);
      CHECK(to_json(once[0]) == to_json(twice[0]));
    }
  }

  TEST_CASE("titles are not context") {
    Sample s = fixtures::make_sample("t", {{"Body text."}});
    s.documents[0].title = "Title";
    CHECK(s.context_text() == "Body text.");
    CHECK(s.context_sentences().size() == 1);
  }

  TEST_CASE("segmentation counts") {
    const Sample s = fixtures::make_sample("s", {{"A one. A two.", "B one."}, {"C one!", "D one? D two."}});
    CHECK(segment_context(s, Granularity::paragraph).units.size() == 4);
    CHECK(segment_context(s, Granularity::sentence).units.size() == 6);
    const auto ctx = segment_context(s, Granularity::context);
    REQUIRE(ctx.units.size() == 1);
    CHECK(ctx.units[0].text == s.context_text());
    const auto sent = segment_context(fixtures::make_sample("x", {{"A. B! C?"}}), Granularity::sentence);
    CHECK(sent.units.size() == 3);
    CHECK(sent.units[1].source_doc_id == "d1");
  }

  TEST_CASE("segmentation round-trip preserves every non-space character") {
    std::mt19937_64 rng(11);
    ApproxTokenizer tok;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::vector<std::string>> docs(1 + rng() % 3);
      for (auto& d : docs) {
        for (std::size_t p = 0; p < 1 + rng() % 4; ++p) {
          d.push_back(fixtures::numbered_text(1 + rng() % 60, 1 + rng() % 9));
        }
      }
      const Sample s = fixtures::make_sample("s", docs);
      for (auto g : {Granularity::context, Granularity::paragraph, Granularity::sentence,
                     Granularity::token_chunk}) {
        const auto seg = segment_context(s, g, &tok, 7);
        CHECK(strip_ws(seg.joined()) == strip_ws(s.context_text()));
        for (const auto& u : seg.units) CHECK_FALSE(is_blank(u.text));
      }
    }
  }

  TEST_CASE("empty context cannot be segmented") {
    Sample s;
    s.id = "empty";
    s.references = {"x"};
    CHECK_THROWS_AS(segment_context(s, Granularity::sentence), InvalidArgument);
  }

  TEST_CASE("subset of everything is the identity") {
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back("id" + std::to_string(i));
    const auto idx = subset_indices(ids, ids.size(), 42);
    REQUIRE(idx.size() == ids.size());
    for (std::size_t i = 0; i < idx.size(); ++i) CHECK(idx[i] == i);
    CHECK_THROWS_AS(subset_indices(ids, 31, 42), InvalidArgument);
  }

  TEST_CASE("subset is deterministic and independent of input order") {
    std::vector<std::string> ids;
    for (int i = 0; i < 500; ++i) ids.push_back("s" + std::to_string(i * 7));
    auto pick = [](const std::vector<std::string>& v, std::uint64_t seed) {
      std::vector<std::string> out;
      for (auto i : subset_indices(v, 60, seed)) out.push_back(v[i]);
      return out;
    };
    const auto a = pick(ids, 42);
    CHECK(a == pick(ids, 42));
    CHECK(a != pick(ids, 43));
    auto shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(9));
    auto b = pick(shuffled, 42);
    auto a_sorted = a;
    std::sort(a_sorted.begin(), a_sorted.end());
    std::sort(b.begin(), b.end());
    CHECK(a_sorted == b);
  }

  TEST_CASE("seed 42, 1000 of 7405 ids matches the frozen list") {
    std::vector<std::string> ids;
    char buf[32];
    for (int i = 0; i < 7405; ++i) {
      std::snprintf(buf, sizeof buf, "hotpot-%05d", i);
      ids.push_back(buf);
    }
    std::istringstream golden(fixtures::read_file(fixtures::golden("subset_seed42_n1000_of7405.txt")));
    std::vector<std::string> expected;
    for (std::string line; std::getline(golden, line);) expected.push_back(line);
    std::vector<std::string> got;
    for (auto i : subset_indices(ids, 1000, 42)) got.push_back(ids[i]);
    CHECK(got.size() == 1000);
    CHECK(got == expected);
  }
}
