#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pcev {

std::string_view trim(std::string_view s);
bool is_blank(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::string join(std::span<const std::string> parts, std::string_view sep);

// Half-open byte range [begin, end) into some source text.
struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Rule-based sentence splitter. A boundary is terminal punctuation (. ! ?),
// optionally followed by closing quotes/brackets, then whitespace, then an
// uppercase letter or digit (optionally behind an opening quote/bracket).
// A period that ends an allowlisted abbreviation ("Dr.", "e.g.", "Fig.", ...)
// is never a boundary. Returned spans are trimmed and non-empty.
std::vector<TextSpan> split_sentence_spans(std::string_view text);
std::vector<std::string> split_sentences(std::string_view text);

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the tokenized text
  std::size_t end = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<Token> tokenize(std::string_view text) const = 0;
  // Reported next to every token count so numbers from different
  // tokenizers are never mixed silently.
  virtual std::string name() const = 0;
  virtual std::size_t count(std::string_view text) const {
    return tokenize(text).size();
  }
};

// Offline stand-in for a model tokenizer: maximal runs of word bytes
// (ASCII alphanumerics and any byte >= 0x80) and single ASCII punctuation
// characters. Whitespace is never part of a token.
class ApproxTokenizer final : public Tokenizer {
 public:
  std::vector<Token> tokenize(std::string_view text) const override;
  std::string name() const override { return "approx-wordpunct-v1"; }
};

// Renders the subsequence `keep` (ascending token indices) of `tokens` back
// to text. Tokens adjacent in the source keep their original separator;
// a gap left by dropped tokens becomes one space. With ApproxTokenizer the
// result re-tokenizes to exactly the kept tokens.
std::string render_subsequence(std::string_view source,
                               std::span<const Token> tokens,
                               std::span<const std::size_t> keep);

// Longest prefix of `text` holding at most `max_tokens` whole tokens.
std::string truncate_to_tokens(std::string_view text, const Tokenizer& tokenizer,
                               std::size_t max_tokens);

}  // namespace pcev
