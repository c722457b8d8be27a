#include "pcev/preservation.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>

#include "pcev/errors.hpp"
#include "pcev/prng.hpp"
#include "pcev/prompts.hpp"
#include "pcev/text.hpp"

namespace pcev {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kMonths = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};

// Months that are also common words or names when they stand alone.
const std::set<std::string, std::less<>> kAmbiguousMonths = {"May", "March"};

const std::set<std::string, std::less<>> kStopwords = {
    "The",   "A",      "An",    "In",     "On",      "At",       "After",   "Before", "Since",
    "She",   "He",     "It",    "They",   "We",      "I",        "His",     "Her",    "Their",
    "This",  "That",   "These", "Those",  "There",   "When",     "While",   "But",    "And",
    "Or",    "If",     "As",    "By",     "For",     "From",     "With",    "Of",     "To",
    "During", "Although", "However", "Its", "Our",   "My",       "Your",    "Then",   "Also",
    "Both",  "Each",   "All",   "Some",   "What",    "Which",    "Who",     "Why",    "How",
    "Here",  "Question", "Answer", "Background", "Summary", "Article"};

const std::set<std::string, std::less<>> kOrgKeywords = {
    "Inc",     "Corp",    "Corporation", "Company",    "Co",         "Ltd",     "LLC",
    "University", "College", "Institute", "Association", "Party",    "Council", "Committee",
    "Bank",    "Group",   "Records",     "Club",       "FC",         "Agency",  "Department",
    "Ministry", "Foundation", "Society", "Army",       "Navy",       "Church",  "School",
    "Airlines", "Press",  "Times",       "News"};

const std::set<std::string, std::less<>> kGazetteer = {
    "United States", "U.S", "USA",     "America",   "United Kingdom", "UK",       "England",
    "Scotland",      "Wales", "Ireland", "France",  "Germany",        "Italy",    "Spain",
    "Portugal",      "Greece", "Russia", "China",   "Japan",          "India",    "Canada",
    "Mexico",        "Brazil", "Australia", "Egypt", "Turkey",        "Israel",   "Iran",
    "Iraq",          "Poland", "Sweden", "Norway",  "Bulgaria",       "Montana",  "California",
    "Texas",         "New York", "Florida", "London", "Paris",        "Berlin",   "Rome",
    "Madrid",        "Athens", "Moscow", "Tokyo",   "Beijing",        "Washington", "Chicago",
    "Boston",        "Los Angeles", "Europe", "Asia", "Africa"};

struct Word {
  std::size_t begin = 0;  // core span, punctuation stripped
  std::size_t end = 0;
  std::string core;
  bool break_after = false;
  bool comma_after = false;
};

bool is_alnum_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    bool break_before = false;
    while (b < e && !is_alnum_byte(text[b])) {
      if (text[b] == '(' || text[b] == '"') break_before = true;
      ++b;
    }
    while (e > b && !is_alnum_byte(text[e - 1])) --e;
    if (b < e) {
      if (break_before && !out.empty()) out.back().break_after = true;
      Word w;
      w.begin = b;
      w.end = e;
      w.core = std::string(text.substr(b, e - b));
      const std::string_view tail = text.substr(e, j - e);
      w.break_after = tail.find_first_of(",.;:!?)\"") != std::string_view::npos;
      w.comma_after = tail.find(',') != std::string_view::npos;
      out.push_back(std::move(w));
    } else if (!out.empty()) {
      out.back().break_after = true;  // a standalone dash or quote
    }
    i = j;
  }
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool is_year(const Word& w) {
  if (w.core.size() != 4 || !all_digits(w.core)) return false;
  const int y = std::stoi(w.core);
  return y >= 1000 && y <= 2099;
}

bool is_day(const Word& w) {
  if (w.core.empty() || w.core.size() > 2 || !all_digits(w.core)) return false;
  const int d = std::stoi(w.core);
  return d >= 1 && d <= 31;
}

bool is_number(const Word& w) {
  static const std::regex kNum(R"(\d[\d,]*(\.\d+)?)");
  return std::regex_match(w.core, kNum);
}

bool is_capitalized(const Word& w) {
  return !w.core.empty() && std::isupper(static_cast<unsigned char>(w.core[0]));
}

EntityType type_of_span(const std::vector<std::string>& words, const std::string& surface) {
  for (const auto& w : words) {
    if (kOrgKeywords.count(w)) return EntityType::ORG;
  }
  if (kGazetteer.count(surface)) return EntityType::GPE;
  if (words.size() >= 2 && words.size() <= 3) return EntityType::PERSON;
  return EntityType::OTHER;
}

}  // namespace

std::string_view to_string(EntityType t) {
  switch (t) {
    case EntityType::PERSON: return "PERSON";
    case EntityType::GPE: return "GPE";
    case EntityType::DATE: return "DATE";
    case EntityType::CARDINAL: return "CARDINAL";
    case EntityType::ORG: return "ORG";
    case EntityType::OTHER: return "OTHER";
  }
  return "OTHER";
}

EntityType parse_entity_type(std::string_view s) {
  const std::string upper = [&] {
    std::string u(s);
    for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return u;
  }();
  for (auto t : kEntityTypes) {
    if (to_string(t) == upper) return t;
  }
  return EntityType::OTHER;
}

EntityMention make_mention(std::string surface, EntityType etype) {
  const auto tokens = normalize_answer(surface);
  if (tokens.empty()) throw InvalidArgument("entity '" + surface + "' has no alphanumeric content");
  return {std::move(surface), etype, join(tokens, " ")};
}

std::vector<EntityMention> RuleEntityExtractor::extract(std::string_view text) {
  std::vector<EntityMention> out;
  const auto words = split_words(text);
  auto surface = [&](std::size_t a, std::size_t b) {
    return std::string(text.substr(words[a].begin, words[b].end - words[a].begin));
  };

  std::size_t i = 0;
  while (i < words.size()) {
    const Word& w = words[i];
    if (kMonths.count(w.core)) {
      std::size_t end = i;
      if (i + 1 < words.size() && !w.break_after) {
        if (is_day(words[i + 1])) {
          end = i + 1;
          if (words[i + 1].comma_after && i + 2 < words.size() && is_year(words[i + 2])) {
            end = i + 2;
          } else if (!words[i + 1].break_after && i + 2 < words.size() && is_year(words[i + 2])) {
            end = i + 2;
          }
        } else if (is_year(words[i + 1])) {
          end = i + 1;
        }
      }
      if (end > i) {
        out.push_back(make_mention(surface(i, end), EntityType::DATE));
      } else if (!kAmbiguousMonths.count(w.core)) {
        out.push_back(make_mention(w.core, EntityType::DATE));
      }
      i = end + 1;
      continue;
    }
    if (is_year(w)) {
      out.push_back(make_mention(w.core, EntityType::DATE));
      ++i;
      continue;
    }
    if (is_number(w)) {
      out.push_back(make_mention(w.core, EntityType::CARDINAL));
      ++i;
      continue;
    }
    if (is_capitalized(w)) {
      std::size_t j = i;
      while (j + 1 < words.size() && !words[j].break_after && is_capitalized(words[j + 1]) &&
             !kMonths.count(words[j + 1].core)) {
        ++j;
      }
      std::size_t a = i;
      while (a <= j && kStopwords.count(words[a].core)) ++a;
      if (a <= j) {
        std::vector<std::string> parts;
        for (std::size_t k = a; k <= j; ++k) parts.push_back(words[k].core);
        const std::string s = surface(a, j);
        out.push_back(make_mention(s, type_of_span(parts, s)));
      }
      i = j + 1;
      continue;
    }
    ++i;
  }
  return out;
}

std::vector<EntityMention> parse_entity_lines(std::string_view output) {
  std::vector<EntityMention> out;
  std::istringstream in{std::string(output)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view t = trim(line);
    if (t.empty() || t.substr(0, 3) == "```") continue;
    json j;
    try {
      j = json::parse(t);
    } catch (const json::exception&) {
      throw ParseError("entity line is not JSON: " + std::string(t), std::string(output));
    }
    if (!j.is_object() || !j.contains("surface") || !j["surface"].is_string()) {
      throw ParseError("entity line lacks a string 'surface'", std::string(output));
    }
    const std::string type = j.contains("type") && j["type"].is_string() ? j["type"].get<std::string>()
                                                                          : std::string("OTHER");
    try {
      out.push_back(make_mention(j["surface"].get<std::string>(), parse_entity_type(type)));
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), std::string(output));
    }
  }
  return out;
}

std::vector<EntityMention> LlmEntityExtractor::extract(std::string_view text) {
  if (is_blank(text)) return {};
  const std::string prompt = fill_text(entity_extraction_template(), {{"text", std::string(text)}});
  return parse_entity_lines(model_.complete(prompt));
}

std::vector<EntityMention> dedup_mentions(std::span<const EntityMention> mentions) {
  std::vector<EntityMention> out;
  std::set<std::string> seen;
  for (const auto& m : mentions) {
    if (seen.insert(m.normalized).second) out.push_back(m);
  }
  return out;
}

EntityPreservation entity_preservation(std::span<const EntityMention> original_entities,
                                       std::string_view reconstruction) {
  EntityPreservation out;
  const auto recon = normalize_answer(reconstruction);
  std::size_t total = 0, preserved = 0;
  for (const auto& m : dedup_mentions(original_entities)) {
    const auto needle = normalize_answer(m.surface);
    const bool kept = contains_run(recon, needle);
    auto& c = out.counts[m.etype];
    ++c.total;
    ++total;
    if (kept) {
      ++c.preserved;
      ++preserved;
    }
    out.audit.emplace_back(m, kept);
  }
  for (const auto& [type, c] : out.counts) {
    out.by_type[type] = static_cast<double>(c.preserved) / static_cast<double>(c.total);
  }
  if (total > 0) out.overall = static_cast<double>(preserved) / static_cast<double>(total);
  return out;
}

SimilarityScores score_similarity(std::string_view original, std::string_view reconstruction,
                                  TokenEmbedder& embedder) {
  SimilarityScores out;
  out.empty_reconstruction = is_blank(reconstruction);
  out.bert = bert_score(reconstruction, original, embedder);
  out.rouge = rouge(reconstruction, original);
  return out;
}

std::string_view to_string(ReconstructionMode m) {
  return m == ReconstructionMode::joint ? "joint" : "per_unit";
}

ReconstructionMode parse_reconstruction_mode(std::string_view s) {
  if (s == "joint") return ReconstructionMode::joint;
  if (s == "per_unit") return ReconstructionMode::per_unit;
  throw InvalidArgument("unknown reconstruction mode '" + std::string(s) + "'");
}

ReconstructionRecord reconstruct(const CompressedPrompt& compressed,
                                 std::span<const SoftUnit> units, int prompt_id,
                                 const SlotGenerateFn& generate, ReconstructionMode mode) {
  ReconstructionRecord rec;
  rec.prompt_id = prompt_id;
  rec.mode = mode;
  const std::string_view tmpl = reconstruction_template(prompt_id);
  std::vector<std::string> originals;
  for (const auto& u : units) originals.push_back(u.text);
  rec.original = join(originals, " ");
  if (compressed.kind != PromptKind::slots) {
    rec.status = ReconstructionStatus::not_applicable;
    return rec;
  }

  auto slots_of = [&](const std::string* unit_id) {
    std::vector<SlotRef> refs;
    for (const auto& s : compressed.slots) {
      if (!unit_id || s.unit_id == *unit_id) refs.push_back({s.slot_id});
    }
    return refs;
  };

  if (mode == ReconstructionMode::joint) {
    const auto refs = slots_of(nullptr);
    if (refs.empty()) throw ProtocolError("reconstruct: compressed prompt has no slots");
    rec.reconstruction = generate(fill_template(tmpl, {{"token", refs}}));
    return rec;
  }
  for (const auto& u : units) {
    const auto refs = slots_of(&u.unit_id);
    if (refs.empty()) throw ProtocolError("reconstruct: no slots for unit '" + u.unit_id + "'");
    rec.per_unit.push_back(generate(fill_template(tmpl, {{"token", refs}})));
  }
  rec.reconstruction = join(rec.per_unit, " ");
  return rec;
}

PreservationResult evaluate_preservation(const ReconstructionRecord& record,
                                         EntityExtractor& extractor, TokenEmbedder& embedder) {
  PreservationResult out;
  out.similarity = score_similarity(record.original, record.reconstruction, embedder);
  const auto entities = extractor.extract(record.original);
  out.entities = entity_preservation(entities, record.reconstruction);
  return out;
}

json to_json(const ReconstructionRecord& r) {
  json j{{"sample_id", r.sample_id},
         {"prompt_id", r.prompt_id},
         {"granularity", std::string(to_string(r.granularity))},
         {"mode", std::string(to_string(r.mode))},
         {"status", r.status == ReconstructionStatus::ok ? "ok" : "not_applicable"},
         {"original", r.original},
         {"reconstruction", r.reconstruction}};
  if (!r.per_unit.empty()) j["per_unit"] = r.per_unit;
  return j;
}

json to_json(const PreservationResult& r) {
  auto prf = [](const PrecisionRecallF1& s) {
    return json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  json by_type = json::object();
  for (const auto& [t, v] : r.entities.by_type) {
    const auto& c = r.entities.counts.at(t);
    by_type[std::string(to_string(t))] = {
        {"fraction", v}, {"total", c.total}, {"preserved", c.preserved}};
  }
  json audit = json::array();
  for (const auto& [m, kept] : r.entities.audit) {
    audit.push_back({{"surface", m.surface},
                     {"type", std::string(to_string(m.etype))},
                     {"normalized", m.normalized},
                     {"preserved", kept}});
  }
  return {{"bertscore",
           {{"precision", r.similarity.bert.precision},
            {"recall", r.similarity.bert.recall},
            {"f1", r.similarity.bert.f1},
            {"empty_input", r.similarity.bert.empty_input}}},
          {"rouge",
           {{"rouge1", prf(r.similarity.rouge.rouge1)},
            {"rouge2", prf(r.similarity.rouge.rouge2)},
            {"rougeL", prf(r.similarity.rouge.rougeL)}}},
          {"empty_reconstruction", r.similarity.empty_reconstruction},
          {"entity_fraction_overall",
           r.entities.overall ? json(*r.entities.overall) : json(nullptr)},
          {"entity_by_type", std::move(by_type)},
          {"entities", std::move(audit)}};
}

std::vector<Sample> build_preservation_set(const std::vector<Sample>& corpus,
                                           const PreservationSetOptions& options) {
  std::vector<Sample> out;
  for (const std::size_t k : options.buckets) {
    if (k == 0) throw InvalidArgument("preservation bucket size must be >= 1");
    std::vector<std::size_t> eligible;
    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> sentences;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto s = corpus[i].context_sentences();
      if (s.size() >= k) {
        eligible.push_back(i);
        ids.push_back(corpus[i].id);
        sentences.push_back(std::move(s));
      }
    }
    if (eligible.size() < options.per_bucket) {
      throw InvalidArgument("bucket of " + std::to_string(k) + " sentences: only " +
                            std::to_string(eligible.size()) + " samples have enough sentences, need " +
                            std::to_string(options.per_bucket));
    }
    for (const std::size_t pick : subset_indices(ids, options.per_bucket, options.seed ^ mix64(k))) {
      const Sample& src = corpus[eligible[pick]];
      Sample s;
      s.id = src.id + "@" + std::to_string(k);
      const std::vector<std::string> first(sentences[pick].begin(),
                                           sentences[pick].begin() + static_cast<std::ptrdiff_t>(k));
      const std::string text = join(first, " ");
      s.documents.push_back({src.documents.front().id, std::nullopt, {text}});
      s.references = {text};
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace pcev
