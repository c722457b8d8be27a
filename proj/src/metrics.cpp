#include "pcev/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "pcev/errors.hpp"

namespace pcev {

namespace {

bool is_alnum_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

std::map<std::string, std::size_t> ngram_counts(std::span<const std::string> tokens,
                                                std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (tokens.size() < n || n == 0) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

double weight_of(const std::map<std::string, double>* idf, const std::string& token) {
  if (idf == nullptr) return 1.0;
  auto it = idf->find(token);
  return it == idf->end() ? 1.0 : it->second;
}

}  // namespace

std::vector<std::string> normalize_answer(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_alnum_byte(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_alnum_byte(text[j])) ++j;
    std::string tok(text.substr(i, j - i));
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

bool contains_run(std::span<const std::string> haystack, std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

std::optional<double> last_number(std::string_view text) {
  static const std::regex kNumber(R"(-?\d[\d,]*(?:\.\d+)?)");
  const std::string s(text);
  std::optional<double> last;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kNumber); it != std::sregex_iterator();
       ++it) {
    std::string m = it->str();
    const auto pos = static_cast<std::size_t>(it->position());
    // "A-1" or "400-80": the hyphen joins words, it is not a sign.
    if (m.front() == '-' && pos > 0 && is_alnum_byte(s[pos - 1])) m.erase(0, 1);
    std::erase(m, ',');
    try {
      last = std::stod(m);
    } catch (const std::exception&) {
    }
  }
  return last;
}

int exact_match(std::string_view prediction, std::span<const std::string> references,
                const EmConfig& cfg) {
  if (cfg.gsm8k_numeric) {
    const auto pred = last_number(prediction);
    if (!pred) return 0;
    for (const auto& ref : references) {
      const auto want = last_number(ref);
      if (want && std::abs(*pred - *want) <= 1e-9 * std::max(1.0, std::abs(*want))) return 1;
    }
    return 0;
  }
  const auto pred = normalize_answer(prediction);
  for (const auto& ref : references) {
    const auto norm = normalize_answer(ref);
    if (cfg.mode == EmMode::strict_equality) {
      if (norm == pred) return 1;
    } else if (contains_run(pred, norm)) {
      return 1;
    }
  }
  return 0;
}

PrecisionRecallF1 make_prf(double precision, double recall) {
  PrecisionRecallF1 s{precision, recall, 0.0};
  if (precision + recall > 0) s.f1 = 2 * precision * recall / (precision + recall);
  return s;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PrecisionRecallF1 rouge_n(std::span<const std::string> prediction,
                          std::span<const std::string> reference, std::size_t n) {
  const auto pc = ngram_counts(prediction, n);
  const auto rc = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : pc) {
    if (auto it = rc.find(gram); it != rc.end()) overlap += std::min(count, it->second);
  }
  const std::size_t pn = prediction.size() >= n ? prediction.size() - n + 1 : 0;
  const std::size_t rn = reference.size() >= n ? reference.size() - n + 1 : 0;
  return make_prf(pn ? static_cast<double>(overlap) / static_cast<double>(pn) : 0.0,
                  rn ? static_cast<double>(overlap) / static_cast<double>(rn) : 0.0);
}

PrecisionRecallF1 rouge_l(std::span<const std::string> prediction,
                          std::span<const std::string> reference) {
  const auto lcs = static_cast<double>(lcs_length(prediction, reference));
  return make_prf(prediction.empty() ? 0.0 : lcs / static_cast<double>(prediction.size()),
                  reference.empty() ? 0.0 : lcs / static_cast<double>(reference.size()));
}

RougeScore rouge(std::string_view prediction, std::string_view reference) {
  const auto p = normalize_answer(prediction);
  const auto r = normalize_answer(reference);
  return {rouge_n(p, r, 1), rouge_n(p, r, 2), rouge_l(p, r)};
}

BertScore bert_score_vectors(const TokenVectors& prediction, const TokenVectors& reference,
                             const std::map<std::string, double>* idf) {
  BertScore out;
  out.idf_weighted = idf != nullptr;
  if (prediction.tokens.empty() || reference.tokens.empty()) {
    out.empty_input = true;
    return out;
  }
  if (prediction.vectors.cols() != reference.vectors.cols()) {
    throw InvalidArgument("bert_score: embedding dimensions differ");
  }
  Eigen::MatrixXd pv = prediction.vectors;
  Eigen::MatrixXd rv = reference.vectors;
  normalize_rows(pv);
  normalize_rows(rv);
  const Eigen::MatrixXd sim = pv * rv.transpose();
  const Eigen::VectorXd best_for_pred = sim.rowwise().maxCoeff();
  const Eigen::VectorXd best_for_ref = sim.colwise().maxCoeff().transpose();

  auto weighted_mean = [&](const Eigen::VectorXd& best, const std::vector<std::string>& toks) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const double w = weight_of(idf, toks[i]);
      num += w * best[static_cast<Eigen::Index>(i)];
      den += w;
    }
    return den > 0 ? num / den : 0.0;
  };
  out.precision = weighted_mean(best_for_pred, prediction.tokens);
  out.recall = weighted_mean(best_for_ref, reference.tokens);
  // Cosines may be negative; only a zero denominator is special-cased.
  if (out.precision + out.recall != 0) {
    out.f1 = 2 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

BertScore bert_score(std::string_view prediction, std::string_view reference,
                     TokenEmbedder& embedder, const std::map<std::string, double>* idf) {
  const TokenVectors p = is_blank(prediction) ? TokenVectors{} : embedder.embed(prediction);
  const TokenVectors r = is_blank(reference) ? TokenVectors{} : embedder.embed(reference);
  return bert_score_vectors(p, r, idf);
}

double CompressionStats::reported_rate() const { return std::round(rate * 10.0) / 10.0; }

CompressionStats compression_stats(std::size_t original_tokens, std::size_t compressed_tokens) {
  if (compressed_tokens == 0) throw InvalidArgument("compression_stats: compressed_tokens must be >= 1");
  return {original_tokens, compressed_tokens,
          static_cast<double>(original_tokens) / static_cast<double>(compressed_tokens)};
}

RelativeChange relative_change(double score, double baseline) {
  if (baseline == 0) throw InvalidArgument("relative_change: baseline must be non-zero");
  RelativeChange out;
  out.percent = (score - baseline) / baseline * 100.0;
  out.rounded = std::lround(out.percent);
  return out;
}

std::uint64_t ModelSpec::derived_params() const {
  const std::uint64_t d = d_model;
  const std::uint64_t d_kv = n_heads ? d * kv_heads() / n_heads : d;
  const std::uint64_t per_layer = d * (2 * d + 2 * d_kv) + ffn_matrices * d * d_ff;
  return n_layers * per_layer + vocab_size * d * (tied_embeddings ? 1 : 2);
}

void ModelSpec::validate() const {
  if (!n_layers || !d_model || !n_heads || !d_ff || !vocab_size || !ffn_matrices) {
    throw InvalidArgument("ModelSpec: every dimension must be >= 1");
  }
  if (kv_heads() > n_heads || n_heads % kv_heads() != 0) {
    throw InvalidArgument("ModelSpec: n_kv_heads must divide n_heads");
  }
  if (n_params) {
    const double derived = static_cast<double>(derived_params());
    const double given = static_cast<double>(*n_params);
    if (std::abs(derived - given) > 0.05 * given) {
      throw InvalidArgument("ModelSpec: n_params disagrees with dimensions by more than 5%");
    }
  }
}

ModelSpec mistral_7b_spec() {
  ModelSpec s;
  s.n_layers = 32;
  s.d_model = 4096;
  s.n_heads = 32;
  s.n_kv_heads = 8;
  s.d_ff = 14336;
  s.vocab_size = 32000;
  s.ffn_matrices = 3;
  s.n_params = 7'240'000'000ULL;
  return s;
}

double estimate_flops(const ModelSpec& spec, std::size_t prompt_tokens,
                      std::size_t generated_tokens) {
  spec.validate();
  const double d = static_cast<double>(spec.d_model);
  const double d_kv = d * static_cast<double>(spec.kv_heads()) / static_cast<double>(spec.n_heads);
  const double layers = static_cast<double>(spec.n_layers);
  const double proj = 2.0 * d * (d + 2.0 * d_kv + d);
  const double ffn = 2.0 * static_cast<double>(spec.ffn_matrices) * d * static_cast<double>(spec.d_ff);
  const double lm_head = 2.0 * d * static_cast<double>(spec.vocab_size);
  const double t = static_cast<double>(prompt_tokens + generated_tokens);
  // Sum over positions p = 1..t of the 4 * d * p attention term.
  const double attention = 4.0 * d * t * (t + 1.0) / 2.0;
  return t * (layers * (proj + ffn) + lm_head) + layers * attention;
}

}  // namespace pcev
