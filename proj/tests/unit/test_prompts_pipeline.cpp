#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "golden_prompts.hpp"
#include "pcev/errors.hpp"
#include "pcev/mock_server.hpp"
#include "pcev/pipeline.hpp"
#include "pcev/prompts.hpp"

using namespace pcev;

TEST_SUITE("prompts") {
  TEST_CASE("rendered prompts match the golden files byte for byte") {
    const auto all = golden_prompts::render_all();
    CHECK(all.size() == 12);
    for (const auto& r : all) {
      INFO(r.name);
      CHECK(r.got == r.expected);
    }
  }

  TEST_CASE("placeholders") {
    CHECK(template_placeholders("a {x} {Y} {y_z} {x}") == std::vector<std::string>{"x", "y_z", "x"});
    CHECK(required_placeholders(TaskKind::conversational_qa, true) ==
          std::vector<std::string>{"context", "conv_context", "question"});
    for (auto kind : {TaskKind::multi_hop_qa, TaskKind::rc_qa, TaskKind::long_doc_summ,
                      TaskKind::math_reasoning, TaskKind::conversational_qa}) {
      CHECK_NOTHROW(validate_template(default_template(kind), true));
      if (kind != TaskKind::long_doc_summ) CHECK_NOTHROW(validate_template(no_context_template(kind), false));
    }
    CHECK_THROWS_AS(no_context_template(TaskKind::long_doc_summ), InvalidArgument);
    PromptTemplate bad{TaskKind::rc_qa, "Only {question}", std::nullopt};
    CHECK_THROWS_AS(validate_template(bad, true), InvalidArgument);
  }

  TEST_CASE("fill_template places slots and merges literals") {
    const auto segs = fill_template("A {x} B {s} C", {{"x", std::string("1")},
                                                      {"s", std::vector<SlotRef>{{"p"}, {"q"}}}});
    REQUIRE(segs.size() == 4);
    CHECK(std::get<TemplateLiteral>(segs[0]).text == "A 1 B ");
    CHECK(std::get<SlotRef>(segs[1]).slot_id == "p");
    CHECK(std::get<SlotRef>(segs[2]).slot_id == "q");
    CHECK(segments_to_text(segs) == "A 1 B <slot:p><slot:q> C");
    CHECK_THROWS_AS(fill_text("{missing}", {}), InvalidArgument);
    CHECK(fill_text("{ not a placeholder } {A}", {}) == "{ not a placeholder } {A}");
  }

  TEST_CASE("reconstruction prompt ids are 1 to 5") {
    CHECK_THROWS_AS(reconstruction_template(0), InvalidArgument);
    CHECK_THROWS_AS(reconstruction_template(6), InvalidArgument);
    for (int i = 1; i <= 5; ++i) CHECK(template_placeholders(reconstruction_template(i)) ==
                                       std::vector<std::string>{"token"});
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("slot prompts count one token per slot") {
    ApproxTokenizer tok;
    Sample s = fixtures::make_sample("s", {{"Context here."}}, "Why?");
    CompressedPrompt c;
    c.kind = PromptKind::slots;
    c.slots = {{"a", "u0", 0}, {"b", "u0", 1}};
    const auto r = render_prompt(default_template(TaskKind::rc_qa), s, c, tok);
    CHECK(r.n_slots == 2);
    CompressedPrompt empty;
    empty.text = std::string{};
    const auto plain = render_prompt(default_template(TaskKind::rc_qa), s, empty, tok);
    CHECK(r.tokens == plain.tokens + 2);
  }

  TEST_CASE("conversational context format") {
    Sample s = fixtures::make_sample("c", {{"P."}});
    s.turns = {{"q1", "a1"}, {"q2", "a2"}, {"q3", "a3"}};
    s.target_turn = 2;
    CHECK(conversational_context(s) == "Question: q1\nAnswer: a1\nQuestion: q2\nAnswer: a2\n");
  }

  TEST_CASE("template overrides are validated") {
    RunConfig c;
    c.dataset.task_kind = TaskKind::rc_qa;
    c.template_override = "Context {context} Q {question}";
    CHECK(template_for(c, true).text == "Context {context} Q {question}");
    c.template_override = "Q {question}";
    CHECK_THROWS_AS(template_for(c, true), InvalidArgument);
  }

  TEST_CASE("run against the mock writes a readable run directory") {
    fixtures::TempDir dir;
    {
      std::ofstream data(dir.path() / "data.jsonl");
      for (int i = 0; i < 4; ++i) {
        data << nlohmann::json{{"id", "s" + std::to_string(i)},
                               {"documents", {{{"id", "d1"}, {"paragraphs", {"The Rhine flows to the North Sea."}}}}},
                               {"question", "Where does the Rhine flow? Answer the question."},
                               {"references", {"the North Sea"}}}
                    .dump()
             << "\n";
      }
      data << "{broken\n";
    }
    MockServer mock;
    mock.start();
    RunConfig c;
    c.dataset.name = "toy";
    c.dataset.task_kind = TaskKind::rc_qa;
    c.dataset.source_path = dir.path() / "data.jsonl";
    c.target.base_url = mock.base_url();
    c.target.model_name = "mock";
    Gateway gw(std::make_shared<HttpTransport>(), std::make_shared<ApproxTokenizer>());
    const auto result = run_generation(c, gw);
    REQUIRE(result.records.size() == 4);
    CHECK(result.n_failed == 0);
    CHECK_FALSE(result.degraded);
    for (const auto& r : result.records) {
      CHECK_FALSE(r.error.has_value());
      CHECK(r.original_prompt_tokens == r.rendered_prompt_tokens);
    }
    write_run(result, dir.path() / "run", gw.stats());
    const auto back = read_records(dir.path() / "run" / "records.jsonl");
    REQUIRE(back.size() == 4);
    CHECK(to_json(back[2]) == to_json(result.records[2]));
    CHECK(read_json(dir.path() / "run" / "manifest.json").contains("config_digest"));
    mock.stop();
  }

  TEST_CASE("config digest tracks what changes results") {
    RunConfig a;
    RunConfig b = a;
    b.target.base_url = "http://other/v1";
    CHECK(config_digest(a) == config_digest(b));
    b.seed = 7;
    CHECK(config_digest(a) != config_digest(b));
  }
}
