#include "pcev/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pcev/errors.hpp"

namespace pcev {

using nlohmann::json;

namespace {

double clean_surprisal(double s) { return std::isnan(s) || s < 0 ? 0.0 : s; }

// Indices of the `quota` largest scores; ties go to the earlier index.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t quota) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(quota, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t count_all(const Tokenizer& tok, std::span<const std::string> texts) {
  std::size_t n = 0;
  for (const auto& t : texts) n += tok.count(t);
  return n;
}

}  // namespace

std::string_view to_string(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::passthrough: return "passthrough";
    case CompressorKind::drop_context: return "drop_context";
    case CompressorKind::hard_prune: return "hard_prune";
    case CompressorKind::soft_service: return "soft_service";
  }
  return "?";
}

CompressorKind parse_compressor_kind(std::string_view s) {
  for (auto k : {CompressorKind::passthrough, CompressorKind::drop_context,
                 CompressorKind::hard_prune, CompressorKind::soft_service}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown compressor kind '" + std::string(s) + "'");
}

std::string_view to_string(PromptPart part) {
  switch (part) {
    case PromptPart::instruction: return "instruction";
    case PromptPart::demos: return "demos";
    case PromptPart::question: return "question";
    case PromptPart::context: return "context";
  }
  return "?";
}

void CompressorConfig::validate() const {
  if (kind == CompressorKind::hard_prune && (!token_budget || *token_budget < 1)) {
    throw InvalidArgument("hard_prune needs token_budget >= 1");
  }
  if (kind == CompressorKind::soft_service) {
    if (!slots_per_unit || *slots_per_unit < 1) {
      throw InvalidArgument("soft_service needs slots_per_unit >= 1");
    }
    if (!service) throw InvalidArgument("soft_service needs a service endpoint");
  }
  if (segment_size < 1) throw InvalidArgument("segment_size must be >= 1");
  if (chunk_tokens < 1) throw InvalidArgument("chunk_tokens must be >= 1");
  if (demo_keep_fraction_floor < 0 || demo_keep_fraction_floor > 1) {
    throw InvalidArgument("demo_keep_fraction_floor must be in [0, 1]");
  }
}

json to_json(const CompressedPrompt& p) {
  json j{{"kind", p.kind == PromptKind::text ? "text" : "slots"},
         {"compressor", std::string(to_string(p.compressor))},
         {"original_context_tokens", p.original_context_tokens},
         {"compressed_context_tokens", p.compressed_context_tokens},
         {"tokenizer", p.tokenizer},
         {"scored_tokens", p.scored_tokens}};
  if (p.kind == PromptKind::text) {
    j["text"] = p.text.value_or("");
    j["demos"] = p.demos;
  } else {
    json slots = json::array();
    for (const auto& s : p.slots) {
      slots.push_back({{"slot_id", s.slot_id}, {"unit_id", s.unit_id}, {"position", s.position}});
    }
    j["slots"] = std::move(slots);
    j["slot_target"] = p.slot_target == SlotTarget::context ? "context" : "demos";
    if (!p.demos.empty()) j["demos"] = p.demos;
  }
  return j;
}

std::size_t BudgetAllocation::total() const {
  std::size_t t = 0;
  for (const auto& [part, n] : per_part) t += n;
  return t;
}

std::size_t BudgetAllocation::budget_for(PromptPart part) const {
  for (const auto& [p, n] : per_part) {
    if (p == part) return n;
  }
  return 0;
}

BudgetAllocation allocate_budget(std::size_t total, const PartSizes& parts, double floor) {
  if (total < 1) throw InvalidArgument("allocate_budget: total must be >= 1");
  const std::size_t fixed = parts.instruction + parts.question;
  if (total < fixed) {
    throw InvalidArgument("allocate_budget: budget " + std::to_string(total) +
                          " is below instruction + question (" + std::to_string(fixed) + ")");
  }
  const std::size_t remaining = total - fixed;

  std::size_t demo_tokens = 0;
  for (const auto& d : parts.demos) demo_tokens += d.tokens;

  BudgetAllocation out;
  std::size_t demo_used = 0;
  if (demo_tokens > 0) {
    double frac = static_cast<double>(demo_tokens) /
                  static_cast<double>(demo_tokens + parts.context);
    frac = std::clamp(std::max(floor, frac), 0.0, 1.0);
    const auto share = static_cast<std::size_t>(std::floor(static_cast<double>(remaining) * frac));

    std::vector<std::size_t> order(parts.demos.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return parts.demos[a].mean_logprob < parts.demos[b].mean_logprob;
    });
    for (std::size_t i : order) {
      if (demo_used + parts.demos[i].tokens <= share) {
        demo_used += parts.demos[i].tokens;
        out.kept_demos.push_back(i);
      }
    }
    std::sort(out.kept_demos.begin(), out.kept_demos.end());
  }
  out.per_part = {{PromptPart::instruction, parts.instruction},
                  {PromptPart::question, parts.question},
                  {PromptPart::demos, demo_used},
                  {PromptPart::context, remaining - demo_used}};
  return out;
}

std::vector<double> GatewayLogprobProvider::surprisals(std::string_view condition,
                                                       std::string_view continuation,
                                                       std::span<const Token> tokens) {
  const LogprobResult r = gateway_.token_logprobs(endpoint_, condition, continuation);
  std::vector<double> sum(tokens.size(), 0.0);
  std::vector<bool> seen(tokens.size(), false);
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    if (std::isnan(r.logprobs[i])) continue;
    const std::size_t lo = r.offsets[i];
    const std::size_t hi = lo + std::max<std::size_t>(r.tokens[i].size(), 1);
    // First of our tokens overlapping the service token's byte span.
    auto it = std::find_if(tokens.begin(), tokens.end(),
                           [&](const Token& t) { return t.end > lo && t.begin < hi; });
    if (it == tokens.end()) continue;
    const auto j = static_cast<std::size_t>(it - tokens.begin());
    sum[j] += -r.logprobs[i];
    seen[j] = true;
  }
  double total = 0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < sum.size(); ++j) {
    if (seen[j]) {
      total += sum[j];
      ++n;
    }
  }
  const double fill = n ? total / static_cast<double>(n) : 0.0;
  for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = clean_surprisal(seen[j] ? sum[j] : fill);
  return sum;
}

std::string prune_tokens(std::string_view text, std::size_t budget, std::size_t segment_size,
                         LogprobProvider& logprobs, const Tokenizer& tokenizer,
                         std::size_t* scored_tokens) {
  if (budget < 1) throw InvalidArgument("prune_tokens: budget must be >= 1");
  if (segment_size < 1) throw InvalidArgument("prune_tokens: segment_size must be >= 1");
  const std::vector<Token> tokens = tokenizer.tokenize(text);
  const std::size_t n = tokens.size();
  if (n <= budget) return std::string(text);

  std::vector<std::size_t> keep;
  std::size_t allowed_so_far = 0;
  for (std::size_t start = 0; start < n; start += segment_size) {
    const std::size_t end = std::min(start + segment_size, n);
    const std::size_t allowed = budget * end / n;
    const std::size_t quota = allowed - allowed_so_far;
    allowed_so_far = allowed;
    if (quota == 0) continue;
    const std::size_t len = end - start;
    if (quota >= len) {
      for (std::size_t i = start; i < end; ++i) keep.push_back(i);
      continue;
    }

    const std::size_t base = tokens[start].begin;
    const std::string_view segment = text.substr(base, tokens[end - 1].end - base);
    std::vector<Token> local(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                             tokens.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto& t : local) {
      t.begin -= base;
      t.end -= base;
    }
    std::string condition;
    if (!keep.empty()) condition = render_subsequence(text, tokens, keep) + " ";

    std::vector<double> scores = logprobs.surprisals(condition, segment, local);
    if (scores.size() != len) {
      throw ProtocolError("prune_tokens: provider returned " + std::to_string(scores.size()) +
                          " scores for " + std::to_string(len) + " tokens");
    }
    for (double& s : scores) s = clean_surprisal(s);
    if (scored_tokens) *scored_tokens += len;
    for (std::size_t i : top_indices(scores, quota)) keep.push_back(start + i);
  }
  return render_subsequence(text, tokens, keep);
}

CompressionInput make_compression_input(const Sample& sample, const CompressorConfig& config,
                                        const Tokenizer& tokenizer) {
  CompressionInput in;
  in.context_text = sample.context_text();
  in.context.granularity = config.granularity;
  if (!is_blank(in.context_text)) {
    in.context = segment_context(sample, config.granularity, &tokenizer, config.chunk_tokens);
  }
  in.demos = sample.icl_demos;
  in.question = sample.question.value_or("");
  return in;
}

std::vector<SoftUnit> soft_units(const CompressorConfig& config, const CompressionInput& input,
                                 const Tokenizer& tokenizer, SlotTarget* target) {
  SegmentedContext source = input.context;
  SlotTarget which = SlotTarget::context;
  if (source.units.empty()) {
    if (input.demos.empty()) throw InvalidArgument("soft_service: nothing to encode");
    source = segment_demos(input.demos, config.granularity, &tokenizer, config.chunk_tokens);
    which = SlotTarget::demos;
  }
  if (target) *target = which;
  std::vector<SoftUnit> units;
  for (const auto& u : source.units) units.push_back({u.unit_id, u.text});
  return units;
}

CompressedPrompt compress(const CompressorConfig& config, const CompressionInput& input,
                          const CompressorServices& services) {
  config.validate();
  if (!services.tokenizer) throw InvalidArgument("compress: no tokenizer");
  const Tokenizer& tok = *services.tokenizer;

  CompressedPrompt out;
  out.compressor = config.kind;
  out.tokenizer = tok.name();
  const std::size_t context_tokens = tok.count(input.context_text);
  const std::size_t demo_tokens = count_all(tok, input.demos);
  out.original_context_tokens = context_tokens + demo_tokens;

  switch (config.kind) {
    case CompressorKind::passthrough:
      out.text = input.context_text;
      out.demos = input.demos;
      out.compressed_context_tokens = out.original_context_tokens;
      return out;

    case CompressorKind::drop_context:
      out.text = std::string{};
      out.compressed_context_tokens = 0;
      return out;

    case CompressorKind::hard_prune: {
      if (!services.logprobs) throw InvalidArgument("hard_prune needs a logprob provider");
      PartSizes parts;
      if (config.budget_includes_prompt) {
        parts.instruction = input.instruction_tokens;
        parts.question = tok.count(input.question);
      }
      parts.context = context_tokens;
      const std::size_t fixed = parts.instruction + parts.question;
      if (*config.token_budget < fixed) {
        throw InvalidArgument("hard_prune: budget " + std::to_string(*config.token_budget) +
                              " cannot hold instruction + question (" + std::to_string(fixed) +
                              " tokens)");
      }
      if (fixed + demo_tokens + context_tokens <= *config.token_budget) {
        out.text = input.context_text;
        out.demos = input.demos;
        out.compressed_context_tokens = out.original_context_tokens;
        return out;
      }
      for (const auto& demo : input.demos) {
        const auto toks = tok.tokenize(demo);
        DemoStats stats{toks.size(), 0.0};
        if (!toks.empty()) {
          const auto s = services.logprobs->surprisals("", demo, toks);
          double sum = 0;
          for (double v : s) sum += clean_surprisal(v);
          stats.mean_logprob = -sum / static_cast<double>(toks.size());
          out.scored_tokens += toks.size();
        }
        parts.demos.push_back(stats);
      }
      const BudgetAllocation alloc =
          allocate_budget(*config.token_budget, parts, config.demo_keep_fraction_floor);
      for (std::size_t i : alloc.kept_demos) out.demos.push_back(input.demos[i]);
      const std::size_t context_budget = alloc.budget_for(PromptPart::context);
      if (context_tokens == 0 || context_budget == 0) {
        out.text = std::string{};
      } else {
        out.text = prune_tokens(input.context_text, context_budget, config.segment_size,
                                *services.logprobs, tok, &out.scored_tokens);
      }
      out.compressed_context_tokens = tok.count(*out.text) + count_all(tok, out.demos);
      return out;
    }

    case CompressorKind::soft_service: {
      if (!services.soft) throw InvalidArgument("soft_service needs a soft encoder");
      const std::vector<SoftUnit> units = soft_units(config, input, tok, &out.slot_target);
      if (out.slot_target == SlotTarget::context) out.demos = input.demos;
      for (const auto& u : units) out.scored_tokens += tok.count(u.text);
      out.kind = PromptKind::slots;
      out.slots = services.soft->encode(units, *config.slots_per_unit);
      if (out.slots.size() != units.size() * *config.slots_per_unit) {
        throw ProtocolError("soft_service: wrong number of slots");
      }
      std::set<std::string> ids;
      for (std::size_t i = 0; i < out.slots.size(); ++i) {
        if (!ids.insert(out.slots[i].slot_id).second) {
          throw ProtocolError("soft_service: duplicate slot_id '" + out.slots[i].slot_id + "'");
        }
        out.slots[i].position = i;
      }
      out.compressed_context_tokens = out.slots.size() + count_all(tok, out.demos);
      return out;
    }
  }
  throw InvalidArgument("compress: unknown kind");
}

}  // namespace pcev
