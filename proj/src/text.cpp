#include "pcev/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace pcev {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_closer(char c) {
  return c == '"' || c == '\'' || c == ')' || c == ']';
}

bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

bool starts_sentence(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isupper(u) != 0 || std::isdigit(u) != 0;
}

constexpr std::array<std::string_view, 32> kAbbreviations = {
    "Dr.",   "Mr.",   "Mrs.", "Ms.",  "Prof.", "St.",  "Jr.",   "Sr.",
    "e.g.",  "i.e.",  "E.g.", "I.e.", "Fig.",  "Figs.", "fig.", "vs.",
    "No.",   "no.",   "Vol.", "Eq.",  "Eqs.",  "cf.",  "al.",   "Mt.",
    "Gen.",  "Col.",  "Lt.",  "Capt.", "Rev.", "Sec.", "approx.", "ca."};

// The whitespace-delimited word ending at `dot` (inclusive), minus any
// leading opening punctuation.
std::string_view word_ending_at(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && !is_space(text[b - 1])) --b;
  while (b < dot && is_opener(text[b])) ++b;
  return text.substr(b, dot + 1 - b);
}

bool is_abbreviation(std::string_view word) {
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) !=
         kAbbreviations.end();
}

}  // namespace

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<TextSpan> split_sentence_spans(std::string_view text) {
  std::vector<TextSpan> spans;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (b < e) spans.push_back({b, e});
  };

  std::size_t start = 0;
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_terminal(text[i])) continue;
    std::size_t j = i;
    while (j < n && is_terminal(text[j])) ++j;
    while (j < n && is_closer(text[j])) ++j;
    if (j >= n || !is_space(text[j])) {
      i = j > i ? j - 1 : i;
      continue;
    }
    std::size_t k = j;
    while (k < n && is_space(text[k])) ++k;
    if (k >= n) break;
    std::size_t probe = k;
    if (is_opener(text[probe]) && probe + 1 < n) ++probe;
    if (!starts_sentence(text[probe])) {
      i = j - 1;
      continue;
    }
    // Only a lone period can belong to an abbreviation.
    if (text[i] == '.' && j == i + 1 && is_abbreviation(word_ending_at(text, i))) {
      continue;
    }
    emit(start, j);
    start = k;
    i = k - 1;
  }
  emit(start, n);
  return spans;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& s : split_sentence_spans(text)) {
    out.emplace_back(text.substr(s.begin, s.end - s.begin));
  }
  return out;
}

std::vector<Token> ApproxTokenizer::tokenize(std::string_view text) const {
  std::vector<Token> tokens;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (is_word_byte(text[i])) {
      while (j < n && is_word_byte(text[j])) ++j;
    }
    tokens.push_back({std::string(text.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

std::string render_subsequence(std::string_view source, std::span<const Token> tokens,
                               std::span<const std::size_t> keep) {
  std::string out;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Token& tok = tokens[keep[k]];
    if (k > 0) {
      const std::size_t prev = keep[k - 1];
      if (keep[k] == prev + 1) {
        const Token& p = tokens[prev];
        out.append(source.substr(p.end, tok.begin - p.end));
      } else {
        out.push_back(' ');
      }
    }
    out.append(source.substr(tok.begin, tok.end - tok.begin));
  }
  return out;
}

std::string truncate_to_tokens(std::string_view text, const Tokenizer& tokenizer,
                               std::size_t max_tokens) {
  const auto tokens = tokenizer.tokenize(text);
  if (tokens.size() <= max_tokens) return std::string(text);
  if (max_tokens == 0) return {};
  return std::string(text.substr(0, tokens[max_tokens - 1].end));
}

}  // namespace pcev
