#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcev/corpus.hpp"
#include "pcev/metrics.hpp"
#include "pcev/pipeline.hpp"

namespace pcev {

// ------------------------------------------------------------------ scoring

struct SampleScore {
  std::string sample_id;
  std::string metric;  // "em" or "bertscore_f1"
  std::optional<double> downstream;  // unset for failed generations
  std::optional<RougeScore> rouge;
  std::optional<BertScore> bert;
};

// EM for QA and math (numeric for math), BERTScore F1 against the first
// reference for summarization. ROUGE is reported alongside for
// summarization.
SampleScore score_record(const GenerationRecord& record, const Sample& sample, TaskKind kind,
                         const EmConfig& em, TokenEmbedder& embedder);
EmConfig default_em_config(TaskKind kind);

nlohmann::json to_json(const SampleScore& s);

// -------------------------------------------------------------- resampling

enum class ResampleMode { without_replacement, with_replacement };
std::string_view to_string(ResampleMode m);

struct AggregateStat {
  std::string metric_name;
  double mean = 0;            // over all values
  double resample_stdev = 0;  // population stdev of the set means
  std::size_t n = 0;
  std::size_t n_excluded_empty = 0;
  ResampleMode mode = ResampleMode::without_replacement;
  std::size_t sets = 0;
  std::size_t set_size = 0;
  std::vector<double> set_means;
};

// Disjoint sets from one seeded shuffle when sets * set_size values are
// available, otherwise each set draws set_size values with replacement.
// Throws InvalidArgument when fewer than set_size values are given.
AggregateStat resample_stats(std::span<const double> values, std::size_t sets = 5,
                             std::size_t set_size = 100, std::uint64_t seed = 42,
                             std::string metric_name = {});

// ------------------------------------------------------------------- tables

struct Cell {
  double value = 0;
  std::optional<double> stdev;
  std::size_t n = 0;
  std::optional<RelativeChange> delta;
};

struct ResultRow {
  std::string method_tag;
  std::string dataset;
  std::string granularity;
  std::map<std::string, Cell> cells;
};

struct ResultTable {
  std::vector<std::string> columns;  // stable order
  std::vector<ResultRow> rows;
  std::optional<std::string> baseline_tag;
  std::vector<std::string> delta_metrics;
  std::vector<std::string> manifest_digests;
};

// Fills deltas for `delta_metrics` against the same-dataset baseline row.
// Throws InvalidArgument naming the dataset when its baseline is missing.
// A zero baseline value leaves the delta unset.
ResultTable build_table(std::vector<ResultRow> rows, std::optional<std::string> baseline_tag,
                        std::vector<std::string> delta_metrics = {"downstream"});

enum class TableFormat { json, csv, markdown };
TableFormat parse_table_format(std::string_view s);

std::string serialize(const ResultTable& table, TableFormat format);
ResultTable table_from_json(const nlohmann::json& j);

// --------------------------------------------------------- run aggregation

struct ReportOptions {
  std::size_t sets = 5;
  std::size_t set_size = 100;
  std::uint64_t seed = 42;
  ModelSpec target_spec = mistral_7b_spec();
  std::optional<ModelSpec> compressor_spec;
};

// Reads records.jsonl, manifest.json and, when present, scores.jsonl,
// grounding.jsonl and preservation.jsonl from one run directory.
ResultRow aggregate_run(const std::filesystem::path& run_dir, const ReportOptions& options,
                        std::string* manifest_digest = nullptr);

// Published compression cost of the three compressors, MFLOPs.
struct ReferenceCost {
  const char* method;
  double mflops;
};
std::span<const ReferenceCost> reference_compression_costs();

}  // namespace pcev
