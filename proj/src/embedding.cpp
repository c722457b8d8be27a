#include "pcev/embedding.hpp"

#include "pcev/metrics.hpp"
#include "pcev/prng.hpp"

namespace pcev {

void normalize_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

void HashEmbedder::add_synonyms(const std::vector<std::string>& group) {
  if (group.empty()) return;
  const std::string head = to_lower_ascii(group.front());
  for (const auto& w : group) canonical_[to_lower_ascii(w)] = head;
}

Eigen::VectorXd HashEmbedder::vector_for(std::string_view token) const {
  std::string key = to_lower_ascii(token);
  if (auto it = canonical_.find(key); it != canonical_.end()) key = it->second;
  SplitMix64 rng(fnv1a64(key) ^ seed_);
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 2.0 * rng.unit() - 1.0;
  return v / v.norm();
}

TokenVectors HashEmbedder::embed(std::string_view text) {
  TokenVectors out;
  out.tokens = normalize_answer(text);
  out.vectors.resize(static_cast<Eigen::Index>(out.tokens.size()),
                     static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(i)) = vector_for(out.tokens[i]).transpose();
  }
  return out;
}

}  // namespace pcev
