#pragma once

// Reference computations written independently of the library, used by the
// unit tests and the acceptance runner. Each one takes the slow, obvious
// route: enumerate n-grams, fill the whole LCS table, loop over every token
// pair, count every matmul layer by layer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Tokens = std::vector<std::string>;

struct Prf {
  double p = 0, r = 0, f = 0;
};

inline Prf prf(double p, double r) {
  Prf out{p, r, 0};
  if (p + r > 0) out.f = 2 * p * r / (p + r);
  return out;
}

// Clipped n-gram overlap counted with a multiset of n-gram strings.
inline Prf rouge_n(const Tokens& pred, const Tokens& ref, std::size_t n) {
  auto grams = [n](const Tokens& t) {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key;
      for (std::size_t k = 0; k < n; ++k) key += t[i + k] + '\x1f';
      ++m[key];
    }
    return m;
  };
  const auto gp = grams(pred), gr = grams(ref);
  int overlap = 0, np = 0, nr = 0;
  for (const auto& [g, c] : gp) {
    np += c;
    auto it = gr.find(g);
    if (it != gr.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : gr) nr += c;
  return prf(np ? double(overlap) / np : 0.0, nr ? double(overlap) / nr : 0.0);
}

// Full (|a|+1) x (|b|+1) table.
inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

inline Prf rouge_l(const Tokens& pred, const Tokens& ref) {
  const double l = static_cast<double>(lcs(pred, ref));
  return prf(pred.empty() ? 0.0 : l / pred.size(), ref.empty() ? 0.0 : l / ref.size());
}

// Greedy matching by explicit double loop over rows, cosine computed from
// raw (not pre-normalized) vectors.
inline Prf bert_score(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& ref) {
  auto cosine = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    double dot = 0, nx = 0, ny = 0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      dot += x[k] * y[k];
      nx += x[k] * x[k];
      ny += y[k] * y[k];
    }
    return dot / (std::sqrt(nx) * std::sqrt(ny));
  };
  auto side = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double sum = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double best = -2;
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        best = std::max(best, cosine(a.row(i).transpose(), b.row(j).transpose()));
      }
      sum += best;
    }
    return sum / static_cast<double>(a.rows());
  };
  const double p = side(pred, ref), r = side(ref, pred);
  return {p, r, p + r != 0 ? 2 * p * r / (p + r) : 0.0};
}

struct ToySpec {
  std::size_t layers, d, heads, kv_heads, ff, vocab, ffn_mats;
};

// Walks every position and every layer, adding 2 FLOPs per multiply-add
// of each matmul a decoder forward pass performs.
inline double flops(const ToySpec& s, std::size_t prompt, std::size_t generated) {
  const std::size_t head_dim = s.d / s.heads;
  const std::size_t d_kv = head_dim * s.kv_heads;
  double total = 0;
  const std::size_t positions = prompt + generated;
  for (std::size_t p = 1; p <= positions; ++p) {
    for (std::size_t l = 0; l < s.layers; ++l) {
      total += 2.0 * s.d * s.d;     // query
      total += 2.0 * s.d * d_kv;    // key
      total += 2.0 * s.d * d_kv;    // value
      for (std::size_t h = 0; h < s.heads; ++h) {
        total += 2.0 * head_dim * p;  // scores against p keys
        total += 2.0 * head_dim * p;  // weighted sum of p values
      }
      total += 2.0 * s.d * s.d;     // output projection
      for (std::size_t m = 0; m < s.ffn_mats; ++m) total += 2.0 * s.d * s.ff;
    }
    total += 2.0 * s.d * s.vocab;   // LM head
  }
  return total;
}

// Random token sequence over a small vocabulary so overlaps are common.
inline Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(0, max_len), word(0, vocab - 1);
  Tokens out(len(rng));
  for (auto& t : out) t = "w" + std::to_string(word(rng));
  return out;
}

inline std::string join(const Tokens& t) {
  std::string out;
  for (const auto& w : t) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace oracle
