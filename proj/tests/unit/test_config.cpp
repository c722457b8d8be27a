#include <doctest.h>

#include <sstream>

#include "pcev/config.hpp"
#include "pcev/errors.hpp"

using namespace pcev;

namespace {

AppConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "/base");
}

const char* kMinimal = R"(
[target]
base_url = "http://127.0.0.1:8080/v1"
model = "mistral"
)";

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    const auto c = parse(kMinimal);
    CHECK(c.run.target.model_name == "mistral");
    CHECK(c.run.compressor.kind == CompressorKind::passthrough);
    CHECK(c.run.seed == 42);
    CHECK(c.run.output_dir == std::filesystem::path("/base/out"));
    CHECK(c.tokenizer_kind == "approx");
    CHECK(c.extractor_kind == "rule");
    CHECK(c.reconstruction_prompts == std::vector<int>{1, 2, 3, 4, 5});
    CHECK(c.report.sets == 5);
    CHECK(c.report.set_size == 100);
    CHECK_FALSE(c.offline);
  }

  TEST_CASE("full file") {
    const auto c = parse(std::string(kMinimal) + R"(
max_retries = 5
input_truncation = 4096

[dataset]
name = "quac"
task_kind = "conversational_qa"
path = "data/quac.jsonl"
min_turns = 4
target_turn_index = 3

[run]
tag = "xrag"
n_samples = 1000
seed = 7

[compressor]
kind = "soft_service"
slots_per_unit = 1
granularity = "sentence"

[soft]
base_url = "http://127.0.0.1:9000/v1"
model = "xrag-7b"

[templates]
override = "B: {context}\nC: {conv_context}\nQ: {question}"

[grounding]
chunk_sentences = 8
graded = true

[reconstruct]
prompts = [1, 3]
mode = "per_unit"

[report]
baseline = "mistral-7b"

[flops.target]
preset = "mistral-7b"
n_layers = 2

[cache]
dir = "/tmp/cache"
offline = true
)");
    CHECK(c.run.target.max_retries == 5);
    CHECK(c.run.target.input_truncation == 4096u);
    CHECK(c.run.dataset.task_kind == TaskKind::conversational_qa);
    CHECK(c.run.dataset.source_path == std::filesystem::path("/base/data/quac.jsonl"));
    CHECK(c.run.dataset.rules.target_turn_index == 3u);
    CHECK(c.run.compressor_tag == "xrag");
    CHECK(c.run.n_samples == 1000u);
    CHECK(c.run.seed == 7);
    CHECK(c.run.compressor.kind == CompressorKind::soft_service);
    CHECK(c.run.compressor.granularity == Granularity::sentence);
    REQUIRE(c.run.compressor.service.has_value());
    CHECK(c.run.compressor.service->model_name == "xrag-7b");
    CHECK(c.run.template_override == std::string("B: {context}\nC: {conv_context}\nQ: {question}"));
    CHECK(c.grounding.chunk_sentences == 8);
    CHECK(c.grounding.graded);
    CHECK(c.reconstruction_prompts == std::vector<int>{1, 3});
    CHECK(c.reconstruction_mode == ReconstructionMode::per_unit);
    CHECK(c.baseline_tag == std::string("mistral-7b"));
    CHECK(c.report.target_spec.n_layers == 2);
    CHECK(c.report.target_spec.d_model == mistral_7b_spec().d_model);
    CHECK(c.cache_dir == std::filesystem::path("/tmp/cache"));
    CHECK(c.offline);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(parse("[dataset]\nname = \"x\"\n"), InvalidArgument);
    CHECK_THROWS_AS(parse(std::string(kMinimal) + "[run]\nsed = 3\n"), InvalidArgument);
    CHECK_THROWS_AS(parse(std::string(kMinimal) + "[run]\nseed = \"x\"\n"), InvalidArgument);
    CHECK_THROWS_AS(parse(std::string(kMinimal) + "[reconstruct]\nprompts = [9]\n"), InvalidArgument);
    CHECK_THROWS_AS(parse(std::string(kMinimal) + "[dataset]\nmin_turns = 3\ntarget_turn_index = 3\n"),
                    InvalidArgument);
    CHECK_THROWS_AS(parse(std::string(kMinimal) + "[embedder]\nkind = \"glove\"\n"), InvalidArgument);
    CHECK_THROWS_AS(load_config("/nonexistent/pcev.toml"), InvalidArgument);
  }
}
