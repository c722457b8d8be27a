#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcev/corpus.hpp"
#include "pcev/gateway.hpp"
#include "pcev/text.hpp"

namespace pcev {

enum class CompressorKind { passthrough, drop_context, hard_prune, soft_service };

std::string_view to_string(CompressorKind kind);
CompressorKind parse_compressor_kind(std::string_view s);

struct CompressorConfig {
  CompressorKind kind = CompressorKind::passthrough;
  std::optional<std::size_t> token_budget;    // hard_prune
  std::optional<std::size_t> slots_per_unit;  // soft_service
  Granularity granularity = Granularity::context;
  std::optional<EndpointRef> service;  // soft_service encoder
  std::optional<EndpointRef> scorer;   // hard_prune logprob model
  std::size_t segment_size = 128;
  double demo_keep_fraction_floor = 0.0;
  // Count instruction and question against token_budget. Off: the budget
  // covers demos + context only.
  bool budget_includes_prompt = false;
  std::size_t chunk_tokens = 180;

  void validate() const;
};

enum class PromptKind { text, slots };

// Which template part the slots stand in for. Math prompts have no
// background document, so their demos are what gets encoded.
enum class SlotTarget { context, demos };

struct CompressedPrompt {
  PromptKind kind = PromptKind::text;
  CompressorKind compressor = CompressorKind::passthrough;
  // Context text to place in the template (text kind only).
  std::optional<std::string> text;
  // Demonstrations kept whole, in original order (text kind only).
  std::vector<std::string> demos;
  std::vector<SlotHandle> slots;
  SlotTarget slot_target = SlotTarget::context;
  // Context plus demos. Slots count as one token each.
  std::size_t original_context_tokens = 0;
  std::size_t compressed_context_tokens = 0;
  std::string tokenizer;
  // Tokens the compressor pushed through its own model (scoring or
  // encoding), for cost accounting.
  std::size_t scored_tokens = 0;
};

nlohmann::json to_json(const CompressedPrompt& p);

// ------------------------------------------------------------ budget control

enum class PromptPart { instruction, demos, question, context };
std::string_view to_string(PromptPart part);

struct DemoStats {
  std::size_t tokens = 0;
  double mean_logprob = 0.0;
};

struct PartSizes {
  std::size_t instruction = 0;
  std::size_t question = 0;
  std::vector<DemoStats> demos;
  std::size_t context = 0;
};

struct BudgetAllocation {
  std::vector<std::pair<PromptPart, std::size_t>> per_part;
  // Indices of demos kept, ascending.
  std::vector<std::size_t> kept_demos;

  std::size_t total() const;
  std::size_t budget_for(PromptPart part) const;
};

// Instruction and question keep their full size. The demo share is
// remaining * max(floor, demo_tokens / (demo_tokens + context_tokens)); demos
// fill it whole, lowest mean logprob first, skipping any that do not fit.
// Whatever the kept demos leave goes to the context.
BudgetAllocation allocate_budget(std::size_t total, const PartSizes& parts, double floor);

// ------------------------------------------------------------- token pruning

class LogprobProvider {
 public:
  virtual ~LogprobProvider() = default;
  // Surprisal (nats, >= 0) of each token of `continuation` given
  // `condition`. Token offsets are relative to `continuation`.
  virtual std::vector<double> surprisals(std::string_view condition, std::string_view continuation,
                                         std::span<const Token> tokens) = 0;
};

// Wraps a callable; used for scripted providers.
class FunctionLogprobProvider final : public LogprobProvider {
 public:
  using Fn = std::function<std::vector<double>(std::string_view, std::string_view,
                                               std::span<const Token>)>;
  explicit FunctionLogprobProvider(Fn fn) : fn_(std::move(fn)) {}
  std::vector<double> surprisals(std::string_view condition, std::string_view continuation,
                                 std::span<const Token> tokens) override {
    return fn_(condition, continuation, tokens);
  }

 private:
  Fn fn_;
};

// Scores through the gateway's completions logprobs. Service tokens are
// attributed to our tokens by byte offset and summed; tokens with no score
// get the mean of the others.
class GatewayLogprobProvider final : public LogprobProvider {
 public:
  GatewayLogprobProvider(Gateway& gateway, EndpointRef endpoint)
      : gateway_(gateway), endpoint_(std::move(endpoint)) {}
  std::vector<double> surprisals(std::string_view condition, std::string_view continuation,
                                 std::span<const Token> tokens) override;

 private:
  Gateway& gateway_;
  EndpointRef endpoint_;
};

// Segment-wise pruning. The text is cut into segments of segment_size
// tokens; segment k may keep floor(b*e_k/n) - floor(b*e_{k-1}/n) tokens,
// where e_k is the segment's end index. Each segment is scored given the
// already-compressed prefix, and its highest-surprisal tokens survive
// (earlier token wins a tie). Output is rendered with render_subsequence.
std::string prune_tokens(std::string_view text, std::size_t budget, std::size_t segment_size,
                         LogprobProvider& logprobs, const Tokenizer& tokenizer,
                         std::size_t* scored_tokens = nullptr);

// -------------------------------------------------------------- soft slots

class SoftEncoder {
 public:
  virtual ~SoftEncoder() = default;
  virtual std::vector<SlotHandle> encode(std::span<const SoftUnit> units,
                                         std::size_t slots_per_unit) = 0;
};

class GatewaySoftEncoder final : public SoftEncoder {
 public:
  GatewaySoftEncoder(Gateway& gateway, EndpointRef endpoint)
      : gateway_(gateway), endpoint_(std::move(endpoint)) {}
  std::vector<SlotHandle> encode(std::span<const SoftUnit> units,
                                 std::size_t slots_per_unit) override {
    return gateway_.encode_soft(endpoint_, units, slots_per_unit);
  }

 private:
  Gateway& gateway_;
  EndpointRef endpoint_;
};

// --------------------------------------------------------------- compress

struct CompressionInput {
  // Original context as it appears in an uncompressed prompt; may be empty.
  std::string context_text;
  // Segmentation of context_text; no units when the context is empty.
  SegmentedContext context;
  std::vector<std::string> demos;
  std::string question;
  std::size_t instruction_tokens = 0;
};

CompressionInput make_compression_input(const Sample& sample, const CompressorConfig& config,
                                        const Tokenizer& tokenizer);

struct CompressorServices {
  const Tokenizer* tokenizer = nullptr;
  LogprobProvider* logprobs = nullptr;  // hard_prune
  SoftEncoder* soft = nullptr;          // soft_service
};

// What the soft compressor encodes: the context units, or the demos when
// there is no context.
std::vector<SoftUnit> soft_units(const CompressorConfig& config, const CompressionInput& input,
                                 const Tokenizer& tokenizer, SlotTarget* target = nullptr);

CompressedPrompt compress(const CompressorConfig& config, const CompressionInput& input,
                          const CompressorServices& services);

}  // namespace pcev
