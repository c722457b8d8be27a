#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "fixtures.hpp"
#include "pcev/errors.hpp"
#include "pcev/report.hpp"

using namespace pcev;
using nlohmann::json;

namespace {

ResultRow row(std::string method, std::string dataset, double downstream) {
  ResultRow r;
  r.method_tag = std::move(method);
  r.dataset = std::move(dataset);
  r.granularity = "context";
  r.cells["downstream"] = Cell{downstream, 0.01, 500, std::nullopt};
  r.cells["compression_rate"] = Cell{1.0, std::nullopt, 500, std::nullopt};
  return r;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("resampling matches the independent implementation") {
    const auto cases = json::parse(fixtures::read_file(fixtures::golden("resample_cases.json")));
    REQUIRE(cases.size() == 3);
    for (const auto& c : cases) {
      const auto values = c.at("values").get<std::vector<double>>();
      const auto got = resample_stats(values, c.at("sets"), c.at("set_size"), c.at("seed"), "em");
      INFO("case with ", values.size(), " values, seed ", c.at("seed").get<int>());
      CHECK(std::string(to_string(got.mode)) == c.at("mode").get<std::string>());
      const auto want = c.at("set_means").get<std::vector<double>>();
      REQUIRE(got.set_means.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.set_means[i] - want[i]) <= 1e-12);
      CHECK(std::abs(got.resample_stdev - c.at("stdev").get<double>()) <= 1e-12);
      CHECK(std::abs(got.mean - c.at("mean").get<double>()) <= 1e-12);
    }
  }

  TEST_CASE("resampling edge cases") {
    const std::vector<double> few(99, 1.0);
    CHECK_THROWS_AS(resample_stats(few), InvalidArgument);
    const std::vector<double> ones(500, 1.0);
    const auto s = resample_stats(ones);
    CHECK(s.resample_stdev == 0.0);
    CHECK(s.mean == 1.0);
    CHECK(resample_stats(ones, 5, 100, 1).set_means == resample_stats(ones, 5, 100, 2).set_means);
  }

  TEST_CASE("deltas against the same-dataset baseline") {
    const auto t = build_table({row("baseline", "hotpot", 0.664), row("xrag", "hotpot", 0.297),
                                row("baseline", "quac", 0.869), row("xrag", "quac", 0.838)},
                               "baseline");
    CHECK(t.columns == std::vector<std::string>{"downstream", "compression_rate"});
    CHECK(t.rows[1].cells.at("downstream").delta->rounded == -55);
    CHECK(t.rows[3].cells.at("downstream").delta->rounded == -4);
    CHECK(t.rows[0].cells.at("downstream").delta->rounded == 0);
    CHECK_FALSE(t.rows[1].cells.at("compression_rate").delta.has_value());
  }

  TEST_CASE("missing baseline names the dataset") {
    try {
      build_table({row("baseline", "hotpot", 0.5), row("xrag", "quac", 0.4)}, "baseline");
      FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("quac") != std::string::npos);
    }
  }

  TEST_CASE("zero baseline leaves the delta unset") {
    const auto t = build_table({row("baseline", "d", 0.0), row("x", "d", 0.3)}, "baseline");
    CHECK_FALSE(t.rows[1].cells.at("downstream").delta.has_value());
  }

  TEST_CASE("serialization") {
    auto t = build_table({row("baseline", "hotpot", 0.664), row("xrag", "hotpot", 0.297)}, "baseline");
    t.manifest_digests = {"abc"};
    const std::string js = serialize(t, TableFormat::json);
    const auto back = table_from_json(json::parse(js));
    CHECK(serialize(back, TableFormat::json) == js);
    const std::string csv = serialize(t, parse_table_format("csv"));
    CHECK(csv.rfind("method_tag,dataset,granularity,metric,value,stdev,n,delta_percent", 0) == 0);
    CHECK(csv.find("xrag,hotpot,context,downstream,0.297,0.01,500,-55,abc") != std::string::npos);
    const std::string md = serialize(t, parse_table_format("md"));
    CHECK(md.find("## downstream") != std::string::npos);
    CHECK(md.find("(-55%)") != std::string::npos);
    CHECK_THROWS_AS(parse_table_format("xml"), InvalidArgument);
  }

  TEST_CASE("reference compression costs") {
    const auto costs = reference_compression_costs();
    REQUIRE(costs.size() == 3);
    CHECK(costs[0].mflops == 3.7e7);
  }

  TEST_CASE("scoring picks the metric by task") {
    HashEmbedder emb;
    GenerationRecord rec;
    rec.sample_id = "s";
    rec.response = "It flows to the North Sea.";
    Sample s = fixtures::make_sample("s", {{"x"}}, "q", {"the North Sea"});
    const auto em = score_record(rec, s, TaskKind::rc_qa, default_em_config(TaskKind::rc_qa), emb);
    CHECK(em.metric == "em");
    CHECK(em.downstream == 1.0);
    const auto summ = score_record(rec, s, TaskKind::long_doc_summ, {}, emb);
    CHECK(summ.metric == "bertscore_f1");
    CHECK(summ.rouge.has_value());
    rec.error = "boom";
    CHECK_FALSE(score_record(rec, s, TaskKind::rc_qa, {}, emb).downstream.has_value());
    CHECK(default_em_config(TaskKind::math_reasoning).gsm8k_numeric);
  }
}
