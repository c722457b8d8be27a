#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcev/embedding.hpp"
#include "pcev/text.hpp"

namespace pcev {

// ---------------------------------------------------------------- exact match

enum class EmMode { strict_equality, containment };

struct EmConfig {
  EmMode mode = EmMode::containment;
  // Compare the last number in the prediction with the reference value.
  bool gsm8k_numeric = false;
};

// Lowercased maximal alphanumeric runs; everything else (punctuation,
// newlines, spaces) separates tokens. Bytes >= 0x80 count as alphanumeric
// so UTF-8 words stay intact.
std::vector<std::string> normalize_answer(std::string_view text);

// True if `needle` occurs as a contiguous run inside `haystack`.
// An empty needle never matches.
bool contains_run(std::span<const std::string> haystack, std::span<const std::string> needle);

// Last number in `text` (thousands commas stripped), e.g. "#### 1,250" -> 1250.
std::optional<double> last_number(std::string_view text);

int exact_match(std::string_view prediction, std::span<const std::string> references,
                const EmConfig& cfg);

// ---------------------------------------------------------------------- ROUGE

struct PrecisionRecallF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct RougeScore {
  PrecisionRecallF1 rouge1;
  PrecisionRecallF1 rouge2;
  PrecisionRecallF1 rougeL;
};

// f1 = 0 when precision + recall = 0, harmonic mean otherwise.
PrecisionRecallF1 make_prf(double precision, double recall);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
PrecisionRecallF1 rouge_n(std::span<const std::string> prediction,
                          std::span<const std::string> reference, std::size_t n);
PrecisionRecallF1 rouge_l(std::span<const std::string> prediction,
                          std::span<const std::string> reference);
// Tokenizes both sides with normalize_answer.
RougeScore rouge(std::string_view prediction, std::string_view reference);

// ------------------------------------------------------------------ BERTScore

struct BertScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool idf_weighted = false;
  // Set when either side has no tokens; all scores are then 0.
  bool empty_input = false;
};

// Greedy cosine matching (rows are normalized here): precision averages, over
// prediction tokens, the best cosine against any reference token; recall is
// the mirror image. No baseline rescaling.
BertScore bert_score_vectors(const TokenVectors& prediction, const TokenVectors& reference,
                             const std::map<std::string, double>* idf = nullptr);
BertScore bert_score(std::string_view prediction, std::string_view reference,
                     TokenEmbedder& embedder, const std::map<std::string, double>* idf = nullptr);

// ------------------------------------------------------- compression numbers

struct CompressionStats {
  std::size_t original_tokens = 0;
  std::size_t compressed_tokens = 0;
  double rate = 0;

  // Rate rounded to one decimal, the way tables print it.
  double reported_rate() const;
};

CompressionStats compression_stats(std::size_t original_tokens, std::size_t compressed_tokens);

struct RelativeChange {
  double percent = 0;  // (score - baseline) / baseline * 100
  long rounded = 0;    // whole percent, half away from zero
};

RelativeChange relative_change(double score, double baseline);

// ---------------------------------------------------------------------- FLOPs

struct ModelSpec {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;  // 0 means n_heads (no grouped-query attention)
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  // 2 for a plain MLP, 3 for gated (SwiGLU) feed-forward blocks.
  std::size_t ffn_matrices = 2;
  bool tied_embeddings = false;
  std::optional<std::uint64_t> n_params;

  std::size_t kv_heads() const { return n_kv_heads ? n_kv_heads : n_heads; }
  std::uint64_t derived_params() const;
  // Throws InvalidArgument on missing dimensions, or when n_params is given
  // and differs from derived_params() by more than 5%.
  void validate() const;
};

// Mistral-7B-Instruct-v0.2 dimensions.
ModelSpec mistral_7b_spec();

// Matmul FLOPs (2 per multiply-add) of a decoder-only forward pass over
// prompt_tokens + generated_tokens positions. Position p (1-based) attends to
// p positions. Per layer and position: Q/K/V/O projections, QK^T and
// attention-weighted V (2 * d * p each), feed-forward. Per position: LM head.
// The prompt is processed once; every generated token extends the prefix.
double estimate_flops(const ModelSpec& spec, std::size_t prompt_tokens,
                      std::size_t generated_tokens);

inline double to_mflops(double flops) { return flops / 1e6; }

}  // namespace pcev
