#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcev/compressor.hpp"
#include "pcev/corpus.hpp"
#include "pcev/gateway.hpp"
#include "pcev/grounding.hpp"
#include "pcev/metrics.hpp"

namespace pcev {

enum class EntityType { PERSON, GPE, DATE, CARDINAL, ORG, OTHER };

std::string_view to_string(EntityType t);
// Unknown labels map to OTHER.
EntityType parse_entity_type(std::string_view s);
inline constexpr EntityType kEntityTypes[] = {EntityType::PERSON,   EntityType::GPE,
                                              EntityType::DATE,     EntityType::CARDINAL,
                                              EntityType::ORG,      EntityType::OTHER};

struct EntityMention {
  std::string surface;
  EntityType etype = EntityType::OTHER;
  std::string normalized;  // normalize_answer tokens joined by spaces
};

// Throws InvalidArgument when the surface normalizes to nothing.
EntityMention make_mention(std::string surface, EntityType etype);

class EntityExtractor {
 public:
  virtual ~EntityExtractor() = default;
  virtual std::vector<EntityMention> extract(std::string_view text) = 0;
};

// Offline heuristics: month + day/year and four-digit years are DATE,
// other numbers CARDINAL; runs of capitalized words are ORG (keyword),
// GPE (gazetteer), PERSON (two or three words) or OTHER.
class RuleEntityExtractor final : public EntityExtractor {
 public:
  std::vector<EntityMention> extract(std::string_view text) override;
};

// Asks a model for JSON lines {"surface": ..., "type": ...}.
class LlmEntityExtractor final : public EntityExtractor {
 public:
  explicit LlmEntityExtractor(Judge& model) : model_(model) {}
  std::vector<EntityMention> extract(std::string_view text) override;

 private:
  Judge& model_;
};

class ScriptedEntityExtractor final : public EntityExtractor {
 public:
  explicit ScriptedEntityExtractor(std::vector<EntityMention> mentions)
      : mentions_(std::move(mentions)) {}
  std::vector<EntityMention> extract(std::string_view) override { return mentions_; }

 private:
  std::vector<EntityMention> mentions_;
};

// Blank lines and code fences are ignored; every other line must be a JSON
// object with a non-empty "surface". Throws ParseError otherwise.
std::vector<EntityMention> parse_entity_lines(std::string_view output);

// First mention of each normalized form wins.
std::vector<EntityMention> dedup_mentions(std::span<const EntityMention> mentions);

struct TypeCount {
  std::size_t total = 0;
  std::size_t preserved = 0;
};

struct EntityPreservation {
  // Unset when the original has no entities.
  std::optional<double> overall;
  std::map<EntityType, double> by_type;  // types with at least one mention
  std::map<EntityType, TypeCount> counts;
  std::vector<std::pair<EntityMention, bool>> audit;
  bool undefined() const { return !overall.has_value(); }
};

// Mentions are deduplicated first. A mention is preserved when its
// normalized tokens occur as a contiguous run in the normalized
// reconstruction. Fractions are micro-averages over mentions.
EntityPreservation entity_preservation(std::span<const EntityMention> original_entities,
                                       std::string_view reconstruction);

struct SimilarityScores {
  BertScore bert;
  RougeScore rouge;
  bool empty_reconstruction = false;
};

SimilarityScores score_similarity(std::string_view original, std::string_view reconstruction,
                                  TokenEmbedder& embedder);

enum class ReconstructionMode { joint, per_unit };
std::string_view to_string(ReconstructionMode m);
ReconstructionMode parse_reconstruction_mode(std::string_view s);

enum class ReconstructionStatus { ok, not_applicable };

struct ReconstructionRecord {
  std::string sample_id;
  int prompt_id = 1;
  Granularity granularity = Granularity::context;
  ReconstructionMode mode = ReconstructionMode::joint;
  ReconstructionStatus status = ReconstructionStatus::ok;
  std::string original;
  std::string reconstruction;
  // per_unit mode: one reconstruction per encoded unit.
  std::vector<std::string> per_unit;
};

// Renders reconstruction prompt `prompt_id` with the slots at {token} and
// sends it through `generate`. per_unit mode makes one call per unit and
// joins the answers with spaces. Text prompts come back not_applicable.
using SlotGenerateFn = std::function<std::string(std::span<const TemplateSegment>)>;
ReconstructionRecord reconstruct(const CompressedPrompt& compressed,
                                 std::span<const SoftUnit> units, int prompt_id,
                                 const SlotGenerateFn& generate,
                                 ReconstructionMode mode = ReconstructionMode::joint);

struct PreservationResult {
  SimilarityScores similarity;
  EntityPreservation entities;
};

PreservationResult evaluate_preservation(const ReconstructionRecord& record,
                                         EntityExtractor& extractor, TokenEmbedder& embedder);

nlohmann::json to_json(const ReconstructionRecord& r);
nlohmann::json to_json(const PreservationResult& r);

struct PreservationSetOptions {
  std::vector<std::size_t> buckets{1, 5, 10};
  std::size_t per_bucket = 150;
  std::uint64_t seed = 42;
};

// For each bucket k, picks per_bucket samples with at least k context
// sentences and keeps exactly their first k sentences as a one-paragraph
// document. Ids become "<id>@<k>". Throws when a bucket cannot be filled.
std::vector<Sample> build_preservation_set(const std::vector<Sample>& corpus,
                                           const PreservationSetOptions& options = {});

}  // namespace pcev
