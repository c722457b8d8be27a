#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace pcev {

// Per-token vectors for one text; row i belongs to tokens[i].
struct TokenVectors {
  std::vector<std::string> tokens;
  Eigen::MatrixXd vectors;
};

// Scales every row to unit length. Zero rows stay zero.
void normalize_rows(Eigen::MatrixXd& m);

class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual TokenVectors embed(std::string_view text) = 0;
};

// Deterministic offline embedder: tokens are normalize_answer() tokens and
// each token's vector is seeded from its FNV-1a hash, so equal tokens map to
// equal vectors. Tokens in the same synonym group share one vector.
class HashEmbedder final : public TokenEmbedder {
 public:
  explicit HashEmbedder(std::size_t dim = 64, std::uint64_t seed = 0);

  // All words in `group` embed identically.
  void add_synonyms(const std::vector<std::string>& group);

  Eigen::VectorXd vector_for(std::string_view token) const;
  TokenVectors embed(std::string_view text) override;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::map<std::string, std::string, std::less<>> canonical_;
};

}  // namespace pcev
