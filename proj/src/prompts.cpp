#include "pcev/prompts.hpp"

#include <algorithm>
#include <set>

#include "pcev/errors.hpp"

namespace pcev {

namespace {

const PromptTemplate kQa{
    TaskKind::rc_qa,
    "[INST] Refer to the background document and answer the question. Provide only a short "
    "answer.\n\nBackground: {context}\n\nQuestion: {question} [/INST] The answer is:",
    "The answer is:"};

const PromptTemplate kSummarization{
    TaskKind::long_doc_summ,
    "[INST] Briefly summarize this article:\n\nArticle: {context} [/INST] Summary:", "Summary:"};

const PromptTemplate kMath{
    TaskKind::math_reasoning,
    "[INST] Answer the math question by providing a numerical value. Precede the final answer "
    "with an explanation of the intermediate steps. Do not add any symbols to the final "
    "numerical answer.\n\n###\n Here are some examples:\n{icl_demos}\n###\n\nQuestion: "
    "{question} [/INST]",
    std::nullopt};

const PromptTemplate kConversational{
    TaskKind::conversational_qa,
    "[INST] Refer to the background document, as well as the conversational context and answer "
    "the question. Answer the question by extracting a specific span from the provided "
    "background.\n\nBackground: {context}\n\nConversational context: {conv_context}{question} "
    "[/INST]",
    std::nullopt};

// No-context variants: the background (or examples) block is removed and
// the instruction no longer refers to it.
const PromptTemplate kQaNoContext{
    TaskKind::rc_qa,
    "[INST] Answer the question. Provide only a short answer.\n\nQuestion: {question} [/INST] "
    "The answer is:",
    "The answer is:"};

const PromptTemplate kMathNoContext{
    TaskKind::math_reasoning,
    "[INST] Answer the math question by providing a numerical value. Precede the final answer "
    "with an explanation of the intermediate steps. Do not add any symbols to the final "
    "numerical answer.\n\nQuestion: {question} [/INST]",
    std::nullopt};

const PromptTemplate kConversationalNoContext{
    TaskKind::conversational_qa,
    "[INST] Refer to the conversational context and answer the question.\n\nConversational "
    "context: {conv_context}{question} [/INST]",
    std::nullopt};

constexpr std::string_view kReconstruction[] = {
    "These two expressions are equivalent in essence:(1) {token} (2)",
    "In other words, background: {token} is just another way of saying:",
    "Background: {token} means the same as",
    "{token} After unpacking the ideas in the background information above, we got:",
    "{token} Please offer a restatement of the background sentences I've just read.",
};

constexpr std::string_view kClaimDetection =
    "You are trying to verify the faithfulness of statements made in a given summary of an "
    "article against the actual text of the article. To do so, you first need to break the "
    "summary into a set of \"atomic claims\", each of which will then be passed to a human who "
    "will read the article and verify if the claim is true or not. Each atomic claim must be "
    "fully understandable without any other context from the summary (e.g., all entities must "
    "be referred to by name, not pronoun), and they must be situated within relevant temporal, "
    "location, and causal context whenever possible. Try to keep each atomic claim to a maximum "
    "of 2 sentences. Each atomic claim is separated with \xE2\x80\x99- \xE2\x80\x99. Summary: "
    "{summary} List of atomic claims:";

constexpr std::string_view kFaithfulness =
    "You are provided with a context and a statement. Your task is to carefully read the context "
    "and then determine whether the statement is true or false. Use the information given in "
    "the context to make your decision. Do not provide explanations. Context: {context} "
    "Statement: {statement} Question: Based on the context provided, is the above statement "
    "True or False? Answer:";

constexpr std::string_view kEntityExtraction =
    "List every named entity in the text below. Output one JSON object per line with the keys "
    "\"surface\" (the exact text span) and \"type\" (one of PERSON, GPE, DATE, CARDINAL, ORG, "
    "OTHER). Output nothing else. Text: {text} Entities:";

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

struct Piece {
  bool placeholder = false;
  std::string text;
};

std::vector<Piece> split_template(std::string_view text) {
  std::vector<Piece> out;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j > i + 1 && j < text.size() && text[j] == '}') {
        if (!literal.empty()) out.push_back({false, std::move(literal)});
        literal.clear();
        out.push_back({true, std::string(text.substr(i + 1, j - i - 1))});
        i = j + 1;
        continue;
      }
    }
    literal.push_back(text[i++]);
  }
  if (!literal.empty()) out.push_back({false, std::move(literal)});
  return out;
}

void push_literal(std::vector<TemplateSegment>& out, const std::string& text) {
  if (text.empty()) return;
  if (!out.empty()) {
    if (auto* lit = std::get_if<TemplateLiteral>(&out.back())) {
      lit->text += text;
      return;
    }
  }
  out.push_back(TemplateLiteral{text});
}

}  // namespace

const PromptTemplate& default_template(TaskKind kind) {
  switch (kind) {
    case TaskKind::multi_hop_qa:
    case TaskKind::rc_qa: return kQa;
    case TaskKind::long_doc_summ: return kSummarization;
    case TaskKind::math_reasoning: return kMath;
    case TaskKind::conversational_qa: return kConversational;
  }
  throw InvalidArgument("unknown task kind");
}

const PromptTemplate& no_context_template(TaskKind kind) {
  switch (kind) {
    case TaskKind::multi_hop_qa:
    case TaskKind::rc_qa: return kQaNoContext;
    case TaskKind::math_reasoning: return kMathNoContext;
    case TaskKind::conversational_qa: return kConversationalNoContext;
    case TaskKind::long_doc_summ:
      throw InvalidArgument("summarization has no prompt without the article");
  }
  throw InvalidArgument("unknown task kind");
}

std::vector<std::string> template_placeholders(std::string_view text) {
  std::vector<std::string> out;
  for (auto& p : split_template(text)) {
    if (p.placeholder) out.push_back(std::move(p.text));
  }
  return out;
}

std::vector<std::string> required_placeholders(TaskKind kind, bool with_context) {
  switch (kind) {
    case TaskKind::multi_hop_qa:
    case TaskKind::rc_qa:
      return with_context ? std::vector<std::string>{"context", "question"}
                          : std::vector<std::string>{"question"};
    case TaskKind::long_doc_summ: return {"context"};
    case TaskKind::math_reasoning:
      return with_context ? std::vector<std::string>{"icl_demos", "question"}
                          : std::vector<std::string>{"question"};
    case TaskKind::conversational_qa:
      return with_context ? std::vector<std::string>{"context", "conv_context", "question"}
                          : std::vector<std::string>{"conv_context", "question"};
  }
  return {};
}

void validate_template(const PromptTemplate& t, bool with_context) {
  const auto found = template_placeholders(t.text);
  const std::set<std::string> have(found.begin(), found.end());
  const auto need = required_placeholders(t.task_kind, with_context);
  const std::set<std::string> want(need.begin(), need.end());
  for (const auto& name : want) {
    if (!have.count(name)) {
      throw InvalidArgument("template for " + std::string(to_string(t.task_kind)) +
                            " lacks {" + name + "}");
    }
  }
  for (const auto& name : have) {
    if (!want.count(name)) {
      throw InvalidArgument("template for " + std::string(to_string(t.task_kind)) +
                            " has unexpected {" + name + "}");
    }
  }
}

std::string_view reconstruction_template(int prompt_id) {
  if (prompt_id < 1 || prompt_id > kReconstructionPrompts) {
    throw InvalidArgument("reconstruction prompt_id must be 1..5, got " +
                          std::to_string(prompt_id));
  }
  return kReconstruction[prompt_id - 1];
}

std::string_view claim_detection_template() { return kClaimDetection; }
std::string_view faithfulness_template() { return kFaithfulness; }
std::string_view entity_extraction_template() { return kEntityExtraction; }

std::vector<TemplateSegment> fill_template(std::string_view text,
                                           const std::map<std::string, PlaceholderValue>& values) {
  std::vector<TemplateSegment> out;
  for (const auto& piece : split_template(text)) {
    if (!piece.placeholder) {
      push_literal(out, piece.text);
      continue;
    }
    auto it = values.find(piece.text);
    if (it == values.end()) {
      throw InvalidArgument("missing value for placeholder {" + piece.text + "}");
    }
    if (const auto* s = std::get_if<std::string>(&it->second)) {
      push_literal(out, *s);
    } else {
      for (const auto& slot : std::get<std::vector<SlotRef>>(it->second)) out.push_back(slot);
    }
  }
  return out;
}

std::string fill_text(std::string_view text, const std::map<std::string, std::string>& values) {
  std::map<std::string, PlaceholderValue> v(values.begin(), values.end());
  return segments_to_text(fill_template(text, v));
}

std::string segments_to_text(std::span<const TemplateSegment> segments) {
  std::string out;
  for (const auto& seg : segments) {
    if (const auto* lit = std::get_if<TemplateLiteral>(&seg)) {
      out += lit->text;
    } else {
      out += "<slot:" + std::get<SlotRef>(seg).slot_id + ">";
    }
  }
  return out;
}

}  // namespace pcev
