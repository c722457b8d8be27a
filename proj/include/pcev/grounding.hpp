#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcev/gateway.hpp"

namespace pcev {

// Anything that answers a prompt with text.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

class GatewayJudge final : public Judge {
 public:
  GatewayJudge(Gateway& gateway, EndpointRef endpoint, std::size_t max_new_tokens = 500)
      : gateway_(gateway), endpoint_(std::move(endpoint)), max_new_tokens_(max_new_tokens) {}
  std::string complete(const std::string& prompt) override;

 private:
  Gateway& gateway_;
  EndpointRef endpoint_;
  std::size_t max_new_tokens_;
};

class ScriptedJudge final : public Judge {
 public:
  using Fn = std::function<std::string(const std::string&)>;
  explicit ScriptedJudge(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  Fn fn_;
};

struct Claim {
  std::string text;
  std::size_t index = 0;
};

struct ContextChunk {
  std::vector<std::string> sentences;
  std::size_t chunk_index = 0;

  std::string text() const;  // sentences joined by single spaces
};

struct ClaimVerdict {
  std::size_t claim_index = 0;
  std::vector<bool> per_chunk;
  // Graded mode only: the judge's number per chunk.
  std::vector<double> per_chunk_score;
  double score = 0;  // max over chunks
};

struct GroundingResult {
  std::optional<double> avg_score;
  std::optional<double> first_claim_score;
  std::size_t n_claims = 0;
  bool excluded_empty = false;
  std::vector<Claim> claims;
  std::vector<ClaimVerdict> verdicts;
  std::size_t unparseable_verdicts = 0;
  // Claims dropped because judging them failed.
  std::size_t failed_claims = 0;
  std::vector<std::string> claim_errors;
};

nlohmann::json to_json(const GroundingResult& r);

// Claims are the lines starting with "- ", in order. Throws ParseError
// (keeping the raw output) when there are none.
std::vector<Claim> parse_claims(std::string_view judge_output);
// Throws InvalidArgument on a blank response.
std::vector<Claim> extract_claims(std::string_view response, Judge& judge);

// Windows of `size` sentences advancing by size - overlap; with overlap 0
// they partition the stream. Throws InvalidArgument on an empty stream.
std::vector<ContextChunk> chunk_context(std::span<const std::string> sentences,
                                        std::size_t size = 10, std::size_t overlap = 0);

struct VerdictParse {
  bool value = false;
  bool parsed = false;
};

// Leading punctuation and spaces are skipped, then "true"/"false" is
// matched case-insensitively as a prefix.
VerdictParse parse_verdict(std::string_view judge_output);

// Unparseable verdicts count as false and bump `*unparseable`.
bool judge_claim(const Claim& claim, const ContextChunk& chunk, Judge& judge,
                 std::size_t* unparseable = nullptr);

struct GroundingOptions {
  std::size_t chunk_sentences = 10;
  std::size_t chunk_overlap = 0;
  // Read a number in [0, 1] from each verdict instead of True/False.
  bool graded = false;
};

GroundingResult grounding_score(std::string_view response,
                                std::span<const std::string> context_sentences, Judge& judge,
                                const GroundingOptions& options = {});

}  // namespace pcev
