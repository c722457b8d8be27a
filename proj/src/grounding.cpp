#include "pcev/grounding.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "pcev/errors.hpp"
#include "pcev/prompts.hpp"
#include "pcev/text.hpp"

namespace pcev {

using nlohmann::json;

namespace {

std::optional<double> graded_value(std::string_view output) {
  static const std::regex kNum(R"((\d*\.\d+|\d+))");
  std::cmatch m;
  if (!std::regex_search(output.begin(), output.end(), m, kNum)) return std::nullopt;
  return std::clamp(std::stod(m.str(1)), 0.0, 1.0);
}

}  // namespace

std::string GatewayJudge::complete(const std::string& prompt) {
  ChatRequest req = ChatRequest::user(prompt);
  req.max_new_tokens = max_new_tokens_;
  return gateway_.chat(endpoint_, req).text;
}

std::string ContextChunk::text() const { return join(sentences, " "); }

json to_json(const GroundingResult& r) {
  json claims = json::array();
  for (const auto& c : r.claims) {
    json row{{"index", c.index}, {"text", c.text}};
    for (const auto& v : r.verdicts) {
      if (v.claim_index == c.index) {
        row["per_chunk"] = v.per_chunk;
        if (!v.per_chunk_score.empty()) row["per_chunk_score"] = v.per_chunk_score;
        row["score"] = v.score;
      }
    }
    claims.push_back(std::move(row));
  }
  return {{"avg_score", r.avg_score ? json(*r.avg_score) : json(nullptr)},
          {"first_claim_score", r.first_claim_score ? json(*r.first_claim_score) : json(nullptr)},
          {"n_claims", r.n_claims},
          {"excluded_empty", r.excluded_empty},
          {"unparseable_verdicts", r.unparseable_verdicts},
          {"failed_claims", r.failed_claims},
          {"claim_errors", r.claim_errors},
          {"claims", std::move(claims)}};
}

std::vector<Claim> parse_claims(std::string_view judge_output) {
  std::vector<Claim> out;
  std::istringstream in{std::string(judge_output)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = trim(line);
    if (t.size() < 2 || t.substr(0, 2) != "- ") continue;
    const std::string_view body = trim(t.substr(2));
    if (body.empty()) continue;
    out.push_back({std::string(body), out.size()});
  }
  if (out.empty()) throw ParseError("judge output contains no '- ' claim lines", std::string(judge_output));
  return out;
}

std::vector<Claim> extract_claims(std::string_view response, Judge& judge) {
  if (is_blank(response)) throw InvalidArgument("extract_claims: response is empty");
  const std::string prompt =
      fill_text(claim_detection_template(), {{"summary", std::string(response)}});
  return parse_claims(judge.complete(prompt));
}

std::vector<ContextChunk> chunk_context(std::span<const std::string> sentences, std::size_t size,
                                        std::size_t overlap) {
  if (sentences.empty()) throw InvalidArgument("chunk_context: no sentences");
  if (size == 0 || overlap >= size) {
    throw InvalidArgument("chunk_context: need size >= 1 and overlap < size");
  }
  std::vector<ContextChunk> out;
  const std::size_t step = size - overlap;
  for (std::size_t start = 0;; start += step) {
    const std::size_t end = std::min(start + size, sentences.size());
    ContextChunk chunk;
    chunk.chunk_index = out.size();
    chunk.sentences.assign(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                           sentences.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(chunk));
    if (end == sentences.size()) break;
  }
  return out;
}

VerdictParse parse_verdict(std::string_view judge_output) {
  std::size_t i = 0;
  while (i < judge_output.size() && !std::isalnum(static_cast<unsigned char>(judge_output[i]))) ++i;
  const std::string head = to_lower_ascii(judge_output.substr(i, 5));
  if (head.rfind("true", 0) == 0) return {true, true};
  if (head == "false") return {false, true};
  return {false, false};
}

bool judge_claim(const Claim& claim, const ContextChunk& chunk, Judge& judge,
                 std::size_t* unparseable) {
  const std::string prompt =
      fill_text(faithfulness_template(), {{"context", chunk.text()}, {"statement", claim.text}});
  const VerdictParse v = parse_verdict(judge.complete(prompt));
  if (!v.parsed && unparseable) ++*unparseable;
  return v.value;
}

GroundingResult grounding_score(std::string_view response,
                                std::span<const std::string> context_sentences, Judge& judge,
                                const GroundingOptions& options) {
  GroundingResult out;
  if (is_blank(response)) {
    out.excluded_empty = true;
    return out;
  }
  out.claims = extract_claims(response, judge);
  out.n_claims = out.claims.size();
  const auto chunks = chunk_context(context_sentences, options.chunk_sentences, options.chunk_overlap);

  double sum = 0;
  std::size_t scored = 0;
  for (const auto& claim : out.claims) {
    try {
      ClaimVerdict v;
      v.claim_index = claim.index;
      for (const auto& chunk : chunks) {
        if (options.graded) {
          const std::string prompt = fill_text(
              faithfulness_template(), {{"context", chunk.text()}, {"statement", claim.text}});
          const std::string raw = judge.complete(prompt);
          double s;
          if (auto g = graded_value(raw)) {
            s = *g;
          } else {
            const VerdictParse p = parse_verdict(raw);
            if (!p.parsed) ++out.unparseable_verdicts;
            s = p.value ? 1.0 : 0.0;
          }
          v.per_chunk.push_back(s >= 0.5);
          v.per_chunk_score.push_back(s);
          v.score = std::max(v.score, s);
        } else {
          const bool ok = judge_claim(claim, chunk, judge, &out.unparseable_verdicts);
          v.per_chunk.push_back(ok);
          if (ok) v.score = 1.0;
        }
      }
      if (claim.index == 0) out.first_claim_score = v.score;
      sum += v.score;
      ++scored;
      out.verdicts.push_back(std::move(v));
    } catch (const std::exception& e) {
      ++out.failed_claims;
      out.claim_errors.push_back("claim " + std::to_string(claim.index) + ": " + e.what());
    }
  }
  if (scored > 0) out.avg_score = sum / static_cast<double>(scored);
  return out;
}

}  // namespace pcev
