#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcev/corpus.hpp"

#ifndef PCEV_GOLDEN_DIR
#error "PCEV_GOLDEN_DIR must point at tests/golden"
#endif

namespace fixtures {

inline std::filesystem::path golden(const std::string& name) {
  return std::filesystem::path(PCEV_GOLDEN_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "pcev") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Sample with one document per entry of `docs`, each a list of paragraphs.
inline pcev::Sample make_sample(std::string id, std::vector<std::vector<std::string>> docs,
                                std::string question = "What?",
                                std::vector<std::string> refs = {"answer"}) {
  pcev::Sample s;
  s.id = std::move(id);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    s.documents.push_back({"d" + std::to_string(i + 1), std::nullopt, std::move(docs[i])});
  }
  s.question = std::move(question);
  s.references = std::move(refs);
  return s;
}

// "w0 w1 ... w{n-1}" style text with sentence breaks every `per_sentence`
// words.
inline std::string numbered_text(std::size_t n_words, std::size_t per_sentence = 12) {
  std::string out;
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i) out += ' ';
    out += (i % per_sentence == 0 ? "W" : "w") + std::to_string(i);
    if (i % per_sentence == per_sentence - 1 || i + 1 == n_words) out += '.';
  }
  return out;
}

}  // namespace fixtures
