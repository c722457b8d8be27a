#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcev/text.hpp"

namespace pcev {

enum class TaskKind { multi_hop_qa, conversational_qa, rc_qa, long_doc_summ, math_reasoning };

enum class Granularity { context, paragraph, sentence, token_chunk };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);
std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

struct TaskRules {
  std::optional<std::size_t> max_context_sentences;
  std::optional<std::size_t> min_turns;
  std::optional<std::size_t> target_turn_index;
  bool keep_only_supporting = false;
  std::uint64_t sample_seed = 42;

  // Throws InvalidArgument when target_turn_index >= min_turns.
  void validate() const;
};

struct DatasetSpec {
  std::string name;
  TaskKind task_kind = TaskKind::rc_qa;
  std::filesystem::path source_path;
  TaskRules rules;
};

struct Document {
  std::string id;
  std::optional<std::string> title;
  std::vector<std::string> paragraphs;
};

struct Turn {
  std::string question;
  std::string answer;
};

struct Sample {
  std::string id;
  std::vector<Document> documents;
  std::optional<std::string> question;
  std::vector<Turn> turns;
  // Index into `turns` of the turn being asked; earlier turns form the
  // conversational context.
  std::optional<std::size_t> target_turn;
  std::vector<std::string> icl_demos;
  std::vector<std::string> references;
  std::optional<std::vector<std::string>> supporting_doc_ids;

  // Paragraphs of all documents joined by newlines. Titles are metadata and
  // never part of the context.
  std::string context_text() const;
  // Sentence stream over all paragraphs in document order.
  std::vector<std::string> context_sentences() const;
  std::span<const Turn> prior_turns() const;
};

nlohmann::json to_json(const Sample& s);

struct SkippedRecord {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

struct LoadResult {
  std::vector<Sample> samples;
  std::vector<SkippedRecord> skipped;

  nlohmann::json error_report(std::string_view source) const;
};

// Parses one JSONL record per line. Records that break the schema for
// `kind` are skipped and reported; a conversational record with enough turns
// gets its question from `rules.target_turn_index`.
LoadResult parse_dataset(std::istream& in, TaskKind kind, const TaskRules& rules);
// Throws std::runtime_error when the file cannot be read.
LoadResult load_dataset(const DatasetSpec& spec);

// Sentence cap (prefix over the document sentence stream), min-turn filter,
// and supporting-document filter. Idempotent.
std::vector<Sample> apply_task_rules(std::vector<Sample> samples, const TaskRules& rules);

struct ContextUnit {
  std::string unit_id;
  std::string text;
  std::string source_doc_id;
};

struct SegmentedContext {
  Granularity granularity = Granularity::context;
  std::vector<ContextUnit> units;

  std::string joined() const;
};

// Throws InvalidArgument on an empty context. `tokenizer` and
// `chunk_tokens` are only used for Granularity::token_chunk.
SegmentedContext segment_context(const Sample& sample, Granularity granularity,
                                 const Tokenizer* tokenizer = nullptr,
                                 std::size_t chunk_tokens = 180);

// Same segmentation applied to ICL demonstrations; each demo is one paragraph.
SegmentedContext segment_demos(std::span<const std::string> demos, Granularity granularity,
                               const Tokenizer* tokenizer = nullptr,
                               std::size_t chunk_tokens = 180);

// Deterministic subset of size n. Each id gets the key
// mix64(seed ^ fnv1a64(id)); the n smallest keys (ties broken by id) win.
// The result keeps the input's relative order and depends only on the set
// of ids, n and seed. Ids must be unique.
std::vector<std::size_t> subset_indices(std::span<const std::string> ids, std::size_t n,
                                        std::uint64_t seed);
std::vector<Sample> sample_subset(const std::vector<Sample>& samples, std::size_t n,
                                  std::uint64_t seed);

}  // namespace pcev
