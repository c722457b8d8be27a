#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcev/compressor.hpp"
#include "pcev/corpus.hpp"
#include "pcev/gateway.hpp"
#include "pcev/prompts.hpp"

namespace pcev {

struct RunConfig {
  DatasetSpec dataset;
  CompressorConfig compressor;
  EndpointRef target;
  // Label of this method in reports, e.g. "mistral-7b" or "llmlingua".
  std::string compressor_tag = "baseline";
  std::optional<std::string> template_override;
  std::optional<std::string> no_context_template_override;
  std::optional<std::size_t> n_samples;
  std::uint64_t seed = 42;
  std::size_t max_new_tokens = 500;
  std::filesystem::path output_dir = "out";
};

nlohmann::json to_json(const RunConfig& c);
std::string config_digest(const RunConfig& c);
const char* code_version();

// Template for this run: the override if set, else the built-in one.
PromptTemplate template_for(const RunConfig& c, bool with_context);

struct RenderedPrompt {
  std::vector<TemplateSegment> segments;
  // Literal tokens plus one per slot.
  std::size_t tokens = 0;
  std::size_t n_slots = 0;
};

// {context} and {icl_demos} come from `compressed`; {question} and
// {conv_context} from the sample. Conversational history renders as
// "Question: q\nAnswer: a\n" per prior turn.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, const Sample& sample,
                             const CompressedPrompt& compressed, const Tokenizer& tokenizer);

std::string conversational_context(const Sample& sample);

struct Timings {
  double compress_ms = 0;
  double generate_ms = 0;
};

struct GenerationRecord {
  std::string sample_id;
  std::string compressor_tag;
  // Prompt length without compression, for the compression rate.
  std::size_t original_prompt_tokens = 0;
  std::size_t rendered_prompt_tokens = 0;
  std::string rendered_prompt;  // slots shown as <slot:ID>
  std::string response;
  bool is_empty = true;
  std::size_t completion_tokens = 0;
  CompressedPrompt compressed;
  std::optional<std::string> error;
  Timings timings;
};

// Deterministic fields only; timings are written separately.
nlohmann::json to_json(const GenerationRecord& r);
GenerationRecord record_from_json(const nlohmann::json& j);

struct RunResult {
  std::vector<Sample> samples;
  std::vector<GenerationRecord> records;  // sorted by sample_id
  std::size_t n_failed = 0;
  bool degraded = false;
  nlohmann::json manifest;
};

// Loads and prepares the dataset, subsamples with the run seed.
std::vector<Sample> prepare_samples(const RunConfig& config, std::vector<SkippedRecord>* skipped = nullptr);

// Services the compressor needs for `config`, bound to `gateway`.
struct CompressorBinding {
  std::unique_ptr<LogprobProvider> logprobs;
  std::unique_ptr<SoftEncoder> soft;
  CompressorServices services(const Tokenizer& tokenizer) const;
};
CompressorBinding bind_compressor(const CompressorConfig& config, Gateway& gateway);

// Compresses and generates for one sample. Throws on failure.
GenerationRecord generate_one(const RunConfig& config, const Sample& sample, Gateway& gateway,
                              const CompressorBinding& binding);

// One record per sample; a failing sample yields a record with `error`
// set. More than 10% failures marks the run degraded.
RunResult run_generation(const RunConfig& config, Gateway& gateway);

// records.jsonl, manifest.json (deterministic) plus timings.jsonl and
// run_stats.json.
void write_run(const RunResult& result, const std::filesystem::path& dir,
               const Gateway::Stats& stats);
std::vector<GenerationRecord> read_records(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace pcev
