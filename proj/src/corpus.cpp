#include "pcev/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include "pcev/errors.hpp"
#include "pcev/prng.hpp"

namespace pcev {

using nlohmann::json;

namespace {

struct TaskKindName {
  TaskKind kind;
  std::string_view name;
};

constexpr TaskKindName kTaskKinds[] = {
    {TaskKind::multi_hop_qa, "multi_hop_qa"},
    {TaskKind::conversational_qa, "conversational_qa"},
    {TaskKind::rc_qa, "rc_qa"},
    {TaskKind::long_doc_summ, "long_doc_summ"},
    {TaskKind::math_reasoning, "math_reasoning"},
};

struct GranularityName {
  Granularity g;
  std::string_view name;
};

constexpr GranularityName kGranularities[] = {
    {Granularity::context, "context"},
    {Granularity::paragraph, "paragraph"},
    {Granularity::sentence, "sentence"},
    {Granularity::token_chunk, "token_chunk"},
};

bool needs_documents(TaskKind k) { return k != TaskKind::math_reasoning; }

bool needs_question(TaskKind k) {
  return k == TaskKind::multi_hop_qa || k == TaskKind::rc_qa || k == TaskKind::math_reasoning;
}

std::vector<std::string> string_list(const json& j, const char* field) {
  if (!j.is_array()) throw InvalidArgument(std::string("'") + field + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw InvalidArgument(std::string("'") + field + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

Document parse_document(const json& j) {
  if (!j.is_object()) throw InvalidArgument("document must be an object");
  Document d;
  if (!j.contains("id") || !j["id"].is_string()) throw InvalidArgument("document missing 'id'");
  d.id = j["id"].get<std::string>();
  if (j.contains("title") && j["title"].is_string()) d.title = j["title"].get<std::string>();
  if (!j.contains("paragraphs")) throw InvalidArgument("document '" + d.id + "' missing 'paragraphs'");
  d.paragraphs = string_list(j["paragraphs"], "paragraphs");
  if (d.paragraphs.empty()) throw InvalidArgument("document '" + d.id + "' has no paragraphs");
  for (const auto& p : d.paragraphs) {
    if (is_blank(p)) throw InvalidArgument("document '" + d.id + "' has an empty paragraph");
  }
  return d;
}

Sample parse_sample(const json& j, TaskKind kind, const TaskRules& rules) {
  if (!j.is_object()) throw InvalidArgument("record is not a JSON object");
  Sample s;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
    throw InvalidArgument("missing 'id'");
  }
  s.id = j["id"].get<std::string>();

  if (j.contains("documents")) {
    if (!j["documents"].is_array()) throw InvalidArgument("'documents' must be an array");
    std::set<std::string> seen;
    for (const auto& d : j["documents"]) {
      s.documents.push_back(parse_document(d));
      if (!seen.insert(s.documents.back().id).second) {
        throw InvalidArgument("duplicate document id '" + s.documents.back().id + "'");
      }
    }
  }
  if (needs_documents(kind) && s.documents.empty()) throw InvalidArgument("missing 'documents'");

  if (j.contains("question") && j["question"].is_string()) s.question = j["question"].get<std::string>();
  if (j.contains("icl_demos")) s.icl_demos = string_list(j["icl_demos"], "icl_demos");
  if (j.contains("references")) s.references = string_list(j["references"], "references");
  if (j.contains("supporting_doc_ids")) {
    s.supporting_doc_ids = string_list(j["supporting_doc_ids"], "supporting_doc_ids");
  }
  if (j.contains("turns")) {
    if (!j["turns"].is_array()) throw InvalidArgument("'turns' must be an array");
    for (const auto& t : j["turns"]) {
      if (!t.is_object() || !t.contains("question") || !t["question"].is_string()) {
        throw InvalidArgument("turn missing 'question'");
      }
      s.turns.push_back({t["question"].get<std::string>(), t.value("answer", std::string{})});
    }
  }

  if (kind == TaskKind::conversational_qa) {
    if (s.turns.empty()) throw InvalidArgument("missing 'turns'");
    const std::size_t target = rules.target_turn_index.value_or(s.turns.size() - 1);
    if (target < s.turns.size()) {
      s.target_turn = target;
      s.question = s.turns[target].question;
      if (s.references.empty() && !s.turns[target].answer.empty()) {
        s.references.push_back(s.turns[target].answer);
      }
    }
  }
  if (kind == TaskKind::math_reasoning && s.icl_demos.empty()) {
    throw InvalidArgument("missing 'icl_demos'");
  }
  if (needs_question(kind) && (!s.question || is_blank(*s.question))) {
    throw InvalidArgument("missing 'question'");
  }
  if (s.references.empty()) throw InvalidArgument("missing 'references'");
  if (s.supporting_doc_ids) {
    for (const auto& id : *s.supporting_doc_ids) {
      const bool found = std::any_of(s.documents.begin(), s.documents.end(),
                                     [&](const Document& d) { return d.id == id; });
      if (!found) throw InvalidArgument("supporting doc id '" + id + "' is not a document");
    }
  }
  return s;
}

// Context text plus the [begin, end) byte range each document occupies.
struct ContextLayout {
  std::string text;
  std::vector<std::tuple<std::size_t, std::size_t, std::string>> doc_ranges;
};

ContextLayout layout_context(std::span<const Document> docs) {
  ContextLayout out;
  for (const auto& d : docs) {
    const std::size_t begin = out.text.size() + (out.text.empty() ? 0 : 1);
    for (const auto& p : d.paragraphs) {
      if (!out.text.empty()) out.text.push_back('\n');
      out.text += p;
    }
    out.doc_ranges.emplace_back(begin, out.text.size(), d.id);
  }
  return out;
}

SegmentedContext segment_documents(std::span<const Document> docs, Granularity granularity,
                                   const Tokenizer* tokenizer, std::size_t chunk_tokens) {
  SegmentedContext out;
  out.granularity = granularity;
  const bool any = std::any_of(docs.begin(), docs.end(), [](const Document& d) {
    return std::any_of(d.paragraphs.begin(), d.paragraphs.end(),
                       [](const std::string& p) { return !is_blank(p); });
  });
  if (!any) throw InvalidArgument("segment_context: empty context cannot be split");

  switch (granularity) {
    case Granularity::context: {
      const auto layout = layout_context(docs);
      out.units.push_back({"context", layout.text, docs.front().id});
      break;
    }
    case Granularity::paragraph:
      for (const auto& d : docs) {
        for (std::size_t p = 0; p < d.paragraphs.size(); ++p) {
          out.units.push_back({d.id + ":p" + std::to_string(p), d.paragraphs[p], d.id});
        }
      }
      break;
    case Granularity::sentence:
      for (const auto& d : docs) {
        for (std::size_t p = 0; p < d.paragraphs.size(); ++p) {
          const auto sents = split_sentences(d.paragraphs[p]);
          for (std::size_t k = 0; k < sents.size(); ++k) {
            out.units.push_back(
                {d.id + ":p" + std::to_string(p) + ":s" + std::to_string(k), sents[k], d.id});
          }
        }
      }
      break;
    case Granularity::token_chunk: {
      if (tokenizer == nullptr || chunk_tokens == 0) {
        throw InvalidArgument("token_chunk granularity needs a tokenizer and chunk size >= 1");
      }
      const auto layout = layout_context(docs);
      const auto tokens = tokenizer->tokenize(layout.text);
      for (std::size_t first = 0, idx = 0; first < tokens.size(); first += chunk_tokens, ++idx) {
        const std::size_t last = std::min(tokens.size(), first + chunk_tokens) - 1;
        const std::size_t b = tokens[first].begin;
        std::string doc = std::get<2>(layout.doc_ranges.back());
        for (const auto& [db, de, id] : layout.doc_ranges) {
          if (b >= db && b < de) {
            doc = id;
            break;
          }
        }
        out.units.push_back({"chunk" + std::to_string(idx),
                             layout.text.substr(b, tokens[last].end - b), doc});
      }
      break;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  for (const auto& e : kTaskKinds) {
    if (e.kind == kind) return e.name;
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view s) {
  for (const auto& e : kTaskKinds) {
    if (e.name == s) return e.kind;
  }
  throw InvalidArgument("unknown task kind '" + std::string(s) + "'");
}

std::string_view to_string(Granularity g) {
  for (const auto& e : kGranularities) {
    if (e.g == g) return e.name;
  }
  return "unknown";
}

Granularity parse_granularity(std::string_view s) {
  for (const auto& e : kGranularities) {
    if (e.name == s) return e.g;
  }
  throw InvalidArgument("unknown granularity '" + std::string(s) + "'");
}

void TaskRules::validate() const {
  if (target_turn_index) {
    if (!min_turns || *min_turns <= *target_turn_index) {
      throw InvalidArgument("target_turn_index requires min_turns > target_turn_index");
    }
  }
}

std::string Sample::context_text() const { return layout_context(documents).text; }

std::vector<std::string> Sample::context_sentences() const {
  std::vector<std::string> out;
  for (const auto& d : documents) {
    for (const auto& p : d.paragraphs) {
      auto s = split_sentences(p);
      out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
  }
  return out;
}

std::span<const Turn> Sample::prior_turns() const {
  const std::size_t n = target_turn ? std::min(*target_turn, turns.size()) : turns.size();
  return std::span<const Turn>(turns.data(), n);
}

json to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  json docs = json::array();
  for (const auto& d : s.documents) {
    json dj{{"id", d.id}, {"paragraphs", d.paragraphs}};
    if (d.title) dj["title"] = *d.title;
    docs.push_back(std::move(dj));
  }
  j["documents"] = std::move(docs);
  if (s.question) j["question"] = *s.question;
  if (!s.turns.empty()) {
    json turns = json::array();
    for (const auto& t : s.turns) turns.push_back({{"question", t.question}, {"answer", t.answer}});
    j["turns"] = std::move(turns);
  }
  if (!s.icl_demos.empty()) j["icl_demos"] = s.icl_demos;
  j["references"] = s.references;
  if (s.supporting_doc_ids) j["supporting_doc_ids"] = *s.supporting_doc_ids;
  return j;
}

json LoadResult::error_report(std::string_view source) const {
  json errors = json::array();
  for (const auto& e : skipped) {
    errors.push_back({{"line", e.line}, {"id", e.id}, {"reason", e.reason}});
  }
  return {{"source", std::string(source)},
          {"n_valid", samples.size()},
          {"n_invalid", skipped.size()},
          {"errors", std::move(errors)}};
}

LoadResult parse_dataset(std::istream& in, TaskKind kind, const TaskRules& rules) {
  LoadResult result;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::string id;
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("id") && j["id"].is_string()) id = j["id"].get<std::string>();
      Sample s = parse_sample(j, kind, rules);
      if (!ids.insert(s.id).second) throw InvalidArgument("duplicate sample id");
      result.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      result.skipped.push_back({line_no, id, std::string("invalid JSON: ") + e.what()});
    } catch (const InvalidArgument& e) {
      result.skipped.push_back({line_no, id, e.what()});
    }
  }
  return result;
}

LoadResult load_dataset(const DatasetSpec& spec) {
  spec.rules.validate();
  std::ifstream in(spec.source_path);
  if (!in) throw std::runtime_error("cannot read dataset file " + spec.source_path.string());
  return parse_dataset(in, spec.task_kind, spec.rules);
}

std::vector<Sample> apply_task_rules(std::vector<Sample> samples, const TaskRules& rules) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    if (rules.min_turns && s.turns.size() < *rules.min_turns) continue;

    if (rules.keep_only_supporting && s.supporting_doc_ids) {
      const auto& keep = *s.supporting_doc_ids;
      std::erase_if(s.documents, [&](const Document& d) {
        return std::find(keep.begin(), keep.end(), d.id) == keep.end();
      });
    }

    if (rules.max_context_sentences) {
      std::size_t remaining = *rules.max_context_sentences;
      std::vector<Document> docs;
      for (auto& d : s.documents) {
        Document kept{d.id, d.title, {}};
        for (auto& p : d.paragraphs) {
          if (remaining == 0) break;
          const auto spans = split_sentence_spans(p);
          if (spans.size() <= remaining) {
            remaining -= spans.size();
            kept.paragraphs.push_back(std::move(p));
          } else {
            kept.paragraphs.push_back(p.substr(0, spans[remaining - 1].end));
            remaining = 0;
          }
        }
        if (!kept.paragraphs.empty()) docs.push_back(std::move(kept));
      }
      s.documents = std::move(docs);
      if (s.supporting_doc_ids) {
        std::erase_if(*s.supporting_doc_ids, [&](const std::string& id) {
          return std::none_of(s.documents.begin(), s.documents.end(),
                              [&](const Document& d) { return d.id == id; });
        });
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string SegmentedContext::joined() const {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i) out.push_back(' ');
    out += units[i].text;
  }
  return out;
}

SegmentedContext segment_context(const Sample& sample, Granularity granularity,
                                 const Tokenizer* tokenizer, std::size_t chunk_tokens) {
  if (sample.documents.empty()) throw InvalidArgument("segment_context: sample has no documents");
  return segment_documents(sample.documents, granularity, tokenizer, chunk_tokens);
}

SegmentedContext segment_demos(std::span<const std::string> demos, Granularity granularity,
                               const Tokenizer* tokenizer, std::size_t chunk_tokens) {
  Document d{"demos", std::nullopt, {}};
  for (const auto& demo : demos) {
    if (!is_blank(demo)) d.paragraphs.push_back(demo);
  }
  const Document docs[] = {d};
  return segment_documents(docs, granularity, tokenizer, chunk_tokens);
}

std::vector<std::size_t> subset_indices(std::span<const std::string> ids, std::size_t n,
                                        std::uint64_t seed) {
  if (n > ids.size()) {
    throw InvalidArgument("sample_subset: n=" + std::to_string(n) + " exceeds " +
                          std::to_string(ids.size()) + " samples");
  }
  std::set<std::string_view> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw InvalidArgument("sample_subset: duplicate sample ids");

  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) keys[i] = mix64(seed ^ fnv1a64(ids[i]));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : ids[a] < ids[b];
  });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<Sample> sample_subset(const std::vector<Sample>& samples, std::size_t n,
                                  std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  std::vector<Sample> out;
  for (std::size_t i : subset_indices(ids, n, seed)) out.push_back(samples[i]);
  return out;
}

}  // namespace pcev
