#include "pcev/config.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "pcev/errors.hpp"

namespace pcev {

namespace {

using Values = std::map<std::string, std::vector<std::string>>;

// TOML basic-string escapes the config reader leaves in place.
std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char c = s[++i];
      switch (c) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: out += '\\'; out += c;
      }
    } else {
      out += s[i];
    }
  }
  return out;
}

class Reader {
 public:
  explicit Reader(Values values) : values_(std::move(values)) {}

  std::optional<std::string> str(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    if (it->second.size() != 1) throw InvalidArgument("config key '" + key + "' expects one value");
    return unescape(it->second.front());
  }
  std::optional<std::vector<std::string>> list(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }
  std::optional<long long> integer(const std::string& key) {
    auto s = str(key);
    if (!s) return std::nullopt;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(*s, &pos);
      if (pos != s->size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument("config key '" + key + "' is not an integer: '" + *s + "'");
    }
  }
  std::optional<std::size_t> count(const std::string& key) {
    auto v = integer(key);
    if (!v) return std::nullopt;
    if (*v < 0) throw InvalidArgument("config key '" + key + "' must be >= 0");
    return static_cast<std::size_t>(*v);
  }
  std::optional<double> real(const std::string& key) {
    auto s = str(key);
    if (!s) return std::nullopt;
    try {
      return std::stod(*s);
    } catch (const std::exception&) {
      throw InvalidArgument("config key '" + key + "' is not a number: '" + *s + "'");
    }
  }
  std::optional<bool> boolean(const std::string& key) {
    auto s = str(key);
    if (!s) return std::nullopt;
    if (*s == "true" || *s == "1") return true;
    if (*s == "false" || *s == "0") return false;
    throw InvalidArgument("config key '" + key + "' is not a boolean: '" + *s + "'");
  }
  bool has_section(const std::string& prefix) const {
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix + ".", 0) == 0) return true;
    }
    return false;
  }
  void check_all_used() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw InvalidArgument("unknown config key '" + k + "'");
    }
  }

 private:
  Values values_;
  std::set<std::string> used_;
};

std::optional<EndpointRef> read_endpoint(Reader& r, const std::string& section) {
  if (!r.has_section(section)) return std::nullopt;
  EndpointRef e;
  e.base_url = r.str(section + ".base_url").value_or("");
  e.model_name = r.str(section + ".model").value_or("");
  e.auth_env_var = r.str(section + ".auth_env").value_or("");
  if (auto v = r.count(section + ".timeout_ms")) e.timeout = std::chrono::milliseconds(*v);
  if (auto v = r.integer(section + ".max_retries")) e.max_retries = static_cast<int>(*v);
  if (auto v = r.count(section + ".input_truncation")) e.input_truncation = *v;
  if (auto v = r.count(section + ".max_in_flight")) e.max_in_flight = *v;
  e.validate();
  return e;
}

std::optional<ModelSpec> read_spec(Reader& r, const std::string& section) {
  if (!r.has_section(section)) return std::nullopt;
  ModelSpec s;
  if (auto preset = r.str(section + ".preset")) {
    if (*preset != "mistral-7b") throw InvalidArgument("unknown model preset '" + *preset + "'");
    s = mistral_7b_spec();
  }
  const ModelSpec before = s;
  if (auto v = r.count(section + ".n_layers")) s.n_layers = *v;
  if (auto v = r.count(section + ".d_model")) s.d_model = *v;
  if (auto v = r.count(section + ".n_heads")) s.n_heads = *v;
  if (auto v = r.count(section + ".n_kv_heads")) s.n_kv_heads = *v;
  if (auto v = r.count(section + ".d_ff")) s.d_ff = *v;
  if (auto v = r.count(section + ".vocab_size")) s.vocab_size = *v;
  if (auto v = r.count(section + ".ffn_matrices")) s.ffn_matrices = *v;
  if (auto v = r.boolean(section + ".tied_embeddings")) s.tied_embeddings = *v;
  // A preset's published count only describes the preset's own dimensions.
  if (s.derived_params() != before.derived_params()) s.n_params.reset();
  if (auto v = r.count(section + ".n_params")) s.n_params = *v;
  s.validate();
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

AppConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  Values values;
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const auto& p : item.parents) key += p + ".";
    key += item.name;
    values[key] = item.inputs;
  }
  Reader r(std::move(values));
  AppConfig c;
  RunConfig& run = c.run;

  run.dataset.name = r.str("dataset.name").value_or("dataset");
  if (auto v = r.str("dataset.task_kind")) run.dataset.task_kind = parse_task_kind(*v);
  if (auto v = r.str("dataset.path")) run.dataset.source_path = resolve(base_dir, *v);
  auto& rules = run.dataset.rules;
  rules.max_context_sentences = r.count("dataset.max_context_sentences");
  rules.min_turns = r.count("dataset.min_turns");
  rules.target_turn_index = r.count("dataset.target_turn_index");
  rules.keep_only_supporting = r.boolean("dataset.keep_only_supporting").value_or(false);
  if (auto v = r.count("dataset.sample_seed")) rules.sample_seed = *v;
  rules.validate();

  run.compressor_tag = r.str("run.tag").value_or("baseline");
  run.n_samples = r.count("run.n_samples");
  run.seed = r.count("run.seed").value_or(rules.sample_seed);
  if (auto v = r.count("run.max_new_tokens")) run.max_new_tokens = *v;
  run.output_dir = resolve(base_dir, r.str("run.output_dir").value_or("out"));

  auto& comp = run.compressor;
  if (auto v = r.str("compressor.kind")) comp.kind = parse_compressor_kind(*v);
  comp.token_budget = r.count("compressor.token_budget");
  comp.slots_per_unit = r.count("compressor.slots_per_unit");
  if (auto v = r.str("compressor.granularity")) comp.granularity = parse_granularity(*v);
  if (auto v = r.count("compressor.segment_size")) comp.segment_size = *v;
  if (auto v = r.real("compressor.demo_keep_fraction_floor")) comp.demo_keep_fraction_floor = *v;
  if (auto v = r.boolean("compressor.budget_includes_prompt")) comp.budget_includes_prompt = *v;
  if (auto v = r.count("compressor.chunk_tokens")) comp.chunk_tokens = *v;
  comp.scorer = read_endpoint(r, "scorer");
  comp.service = read_endpoint(r, "soft");

  auto target = read_endpoint(r, "target");
  if (!target) throw InvalidArgument("config needs a [target] section");
  run.target = *target;

  run.template_override = r.str("templates.override");
  run.no_context_template_override = r.str("templates.no_context_override");

  c.tokenizer_kind = r.str("tokenizer.kind").value_or("approx");
  if (c.tokenizer_kind != "approx" && c.tokenizer_kind != "service") {
    throw InvalidArgument("tokenizer.kind must be approx or service");
  }

  c.judge = read_endpoint(r, "judge");
  if (auto v = r.count("grounding.chunk_sentences")) c.grounding.chunk_sentences = *v;
  if (auto v = r.count("grounding.chunk_overlap")) c.grounding.chunk_overlap = *v;
  if (auto v = r.boolean("grounding.graded")) c.grounding.graded = *v;
  if (auto v = r.count("grounding.max_new_tokens")) c.judge_max_new_tokens = *v;

  c.embedder_kind = r.str("embedder.kind").value_or("hash");
  if (auto v = r.count("embedder.dim")) c.hash_dim = *v;
  if (auto v = r.count("embedder.seed")) c.hash_seed = *v;
  if (c.embedder_kind == "service") {
    c.embedder = read_endpoint(r, "embedder");
  } else if (c.embedder_kind != "hash") {
    throw InvalidArgument("embedder.kind must be hash or service");
  }

  c.extractor_kind = r.str("extractor.kind").value_or("rule");
  if (c.extractor_kind == "llm") {
    c.extractor = read_endpoint(r, "extractor");
  } else if (c.extractor_kind != "rule") {
    throw InvalidArgument("extractor.kind must be rule or llm");
  }

  if (auto v = r.list("reconstruct.prompts")) {
    c.reconstruction_prompts.clear();
    for (const auto& s : *v) {
      const int id = std::stoi(s);
      reconstruction_template(id);  // validates the id
      c.reconstruction_prompts.push_back(id);
    }
  }
  if (auto v = r.str("reconstruct.mode")) c.reconstruction_mode = parse_reconstruction_mode(*v);

  if (auto v = r.count("report.sets")) c.report.sets = *v;
  if (auto v = r.count("report.set_size")) c.report.set_size = *v;
  if (auto v = r.count("report.seed")) c.report.seed = *v;
  c.baseline_tag = r.str("report.baseline");
  if (auto s = read_spec(r, "flops.target")) c.report.target_spec = *s;
  c.report.compressor_spec = read_spec(r, "flops.compressor");

  if (auto v = r.str("cache.dir")) c.cache_dir = resolve(base_dir, *v);
  c.offline = r.boolean("cache.offline").value_or(false);

  r.check_all_used();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config file " + path.string());
  return parse_config(in, path.parent_path());
}

}  // namespace pcev
