#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pcev/corpus.hpp"
#include "pcev/gateway.hpp"

namespace pcev {

// Template text uses {name} placeholders, name in [a-z_]+. Any other brace
// is literal.
struct PromptTemplate {
  TaskKind task_kind = TaskKind::rc_qa;
  std::string text;
  // Text the template already ends with to steer the answer, if any.
  std::optional<std::string> answer_prefix;
};

// Response-generation templates, sent as one user message.
const PromptTemplate& default_template(TaskKind kind);
// Variant used when the context is dropped. Summarization has none and
// throws InvalidArgument.
const PromptTemplate& no_context_template(TaskKind kind);

// Placeholder names in order of appearance (repeats kept).
std::vector<std::string> template_placeholders(std::string_view text);
// Placeholders a response template for `kind` must contain.
std::vector<std::string> required_placeholders(TaskKind kind, bool with_context);
// Throws InvalidArgument unless the placeholders are exactly the required set.
void validate_template(const PromptTemplate& t, bool with_context = true);

// Reconstruction prompts 1..5; the encoded content goes at {token}.
std::string_view reconstruction_template(int prompt_id);
inline constexpr int kReconstructionPrompts = 5;

// Judge prompts. Claim detection takes {summary}; faithfulness takes
// {context} and {statement}.
std::string_view claim_detection_template();
std::string_view faithfulness_template();
// Entity extraction for the LLM extractor; takes {text}.
std::string_view entity_extraction_template();

using PlaceholderValue = std::variant<std::string, std::vector<SlotRef>>;

// Substitutes every placeholder; adjacent literals are merged. Throws
// InvalidArgument naming the first placeholder without a value.
std::vector<TemplateSegment> fill_template(std::string_view text,
                                           const std::map<std::string, PlaceholderValue>& values);
// Text-only convenience.
std::string fill_text(std::string_view text, const std::map<std::string, std::string>& values);

// Literals concatenated, each slot shown as "<slot:ID>".
std::string segments_to_text(std::span<const TemplateSegment> segments);

}  // namespace pcev
