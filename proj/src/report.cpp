#include "pcev/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "pcev/errors.hpp"
#include "pcev/prng.hpp"

namespace pcev {

using nlohmann::json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Display precision per column family.
std::string format_value(const std::string& column, double v) {
  if (column == "compression_rate") return fmt("%.1f", v);
  if (column.find("tokens") != std::string::npos || column.rfind("n_", 0) == 0) {
    return fmt("%.0f", v);
  }
  if (column.find("mflops") != std::string::npos) return fmt("%.2e", v);
  return fmt("%.3f", v);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (!is_blank(line)) out.push_back(json::parse(line));
  }
  return out;
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

const std::vector<std::string> kColumnOrder = {
    "downstream",
    "grounding_avg",
    "grounding_first",
    "n_grounding_excluded_empty",
    "preservation_bertscore_f1",
    "preservation_rouge1_f1",
    "preservation_rougeL_f1",
    "entity_fraction_overall",
    "n_empty",
    "n_failed",
    "original_prompt_tokens",
    "prompt_tokens",
    "compression_rate",
    "flops_target_mflops",
    "flops_compressor_mflops",
};

}  // namespace

// ------------------------------------------------------------------ scoring

EmConfig default_em_config(TaskKind kind) {
  EmConfig c;
  c.mode = EmMode::containment;
  c.gsm8k_numeric = kind == TaskKind::math_reasoning;
  return c;
}

SampleScore score_record(const GenerationRecord& record, const Sample& sample, TaskKind kind,
                         const EmConfig& em, TokenEmbedder& embedder) {
  SampleScore s;
  s.sample_id = record.sample_id;
  if (sample.references.empty()) throw InvalidArgument("sample '" + sample.id + "' has no references");
  if (kind == TaskKind::long_doc_summ) {
    s.metric = "bertscore_f1";
    if (record.error) return s;
    s.bert = bert_score(record.response, sample.references.front(), embedder);
    s.rouge = rouge(record.response, sample.references.front());
    s.downstream = s.bert->f1;
  } else {
    s.metric = "em";
    if (record.error) return s;
    s.downstream = exact_match(record.response, sample.references, em);
  }
  return s;
}

json to_json(const SampleScore& s) {
  json j{{"sample_id", s.sample_id}, {"metric", s.metric}};
  j["downstream"] = s.downstream ? json(*s.downstream) : json(nullptr);
  if (s.bert) {
    j["bertscore"] = {{"precision", s.bert->precision}, {"recall", s.bert->recall}, {"f1", s.bert->f1}};
  }
  if (s.rouge) {
    j["rouge"] = {{"rouge1_f1", s.rouge->rouge1.f1},
                  {"rouge2_f1", s.rouge->rouge2.f1},
                  {"rougeL_f1", s.rouge->rougeL.f1}};
  }
  return j;
}

// -------------------------------------------------------------- resampling

std::string_view to_string(ResampleMode m) {
  return m == ResampleMode::without_replacement ? "without_replacement" : "with_replacement";
}

AggregateStat resample_stats(std::span<const double> values, std::size_t sets,
                             std::size_t set_size, std::uint64_t seed, std::string metric_name) {
  if (sets < 1 || set_size < 1) throw InvalidArgument("resample_stats: sets and set_size must be >= 1");
  if (values.size() < set_size) {
    throw InvalidArgument("resample_stats: " + std::to_string(values.size()) +
                          " values, need at least " + std::to_string(set_size));
  }
  AggregateStat out;
  out.metric_name = std::move(metric_name);
  out.n = values.size();
  out.sets = sets;
  out.set_size = set_size;
  out.mean = mean_of(values);

  SplitMix64 rng(seed);
  const std::size_t n = values.size();
  if (n >= sets * set_size) {
    out.mode = ResampleMode::without_replacement;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    for (std::size_t k = 0; k < sets; ++k) {
      double sum = 0;
      for (std::size_t j = 0; j < set_size; ++j) sum += values[idx[k * set_size + j]];
      out.set_means.push_back(sum / static_cast<double>(set_size));
    }
  } else {
    out.mode = ResampleMode::with_replacement;
    for (std::size_t k = 0; k < sets; ++k) {
      double sum = 0;
      for (std::size_t j = 0; j < set_size; ++j) sum += values[rng.below(n)];
      out.set_means.push_back(sum / static_cast<double>(set_size));
    }
  }
  const double m = mean_of(out.set_means);
  double ss = 0;
  for (double x : out.set_means) ss += (x - m) * (x - m);
  out.resample_stdev = std::sqrt(ss / static_cast<double>(sets));
  return out;
}

// ------------------------------------------------------------------- tables

ResultTable build_table(std::vector<ResultRow> rows, std::optional<std::string> baseline_tag,
                        std::vector<std::string> delta_metrics) {
  ResultTable t;
  t.baseline_tag = std::move(baseline_tag);
  std::set<std::string> present;
  for (const auto& r : rows) {
    for (const auto& [name, cell] : r.cells) present.insert(name);
  }
  for (const auto& c : kColumnOrder) {
    if (present.erase(c)) t.columns.push_back(c);
  }
  t.columns.insert(t.columns.end(), present.begin(), present.end());

  if (t.baseline_tag) {
    t.delta_metrics = std::move(delta_metrics);
    for (auto& row : rows) {
      const ResultRow* base = nullptr;
      for (const auto& cand : rows) {
        if (cand.method_tag == *t.baseline_tag && cand.dataset == row.dataset) base = &cand;
      }
      if (!base) {
        throw InvalidArgument("no baseline '" + *t.baseline_tag + "' row for dataset '" +
                              row.dataset + "'");
      }
      for (const auto& metric : t.delta_metrics) {
        auto it = row.cells.find(metric);
        if (it == row.cells.end()) continue;
        auto bit = base->cells.find(metric);
        if (bit == base->cells.end()) {
          throw InvalidArgument("baseline row for dataset '" + row.dataset + "' has no '" +
                                metric + "' cell");
        }
        if (bit->second.value != 0) it->second.delta = relative_change(it->second.value, bit->second.value);
      }
    }
  }
  t.rows = std::move(rows);
  return t;
}

TableFormat parse_table_format(std::string_view s) {
  if (s == "json") return TableFormat::json;
  if (s == "csv") return TableFormat::csv;
  if (s == "markdown" || s == "md") return TableFormat::markdown;
  throw InvalidArgument("unknown table format '" + std::string(s) + "'");
}

namespace {

json table_to_json(const ResultTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json cells = json::object();
    for (const auto& [name, c] : r.cells) {
      json cj{{"value", c.value}, {"n", c.n}};
      cj["stdev"] = c.stdev ? json(*c.stdev) : json(nullptr);
      if (c.delta) cj["delta"] = {{"percent", c.delta->percent}, {"rounded", c.delta->rounded}};
      cells[name] = std::move(cj);
    }
    rows.push_back({{"method_tag", r.method_tag},
                    {"dataset", r.dataset},
                    {"granularity", r.granularity},
                    {"cells", std::move(cells)}});
  }
  json j{{"columns", t.columns},
         {"rows", std::move(rows)},
         {"delta_metrics", t.delta_metrics},
         {"manifest_digests", t.manifest_digests}};
  j["baseline_tag"] = t.baseline_tag ? json(*t.baseline_tag) : json(nullptr);
  return j;
}

std::string table_to_csv(const ResultTable& t) {
  std::ostringstream out;
  out << "method_tag,dataset,granularity,metric,value,stdev,n,delta_percent,manifest_digests\n";
  std::string digests;
  for (const auto& d : t.manifest_digests) digests += (digests.empty() ? "" : ";") + d;
  for (const auto& r : t.rows) {
    for (const auto& col : t.columns) {
      auto it = r.cells.find(col);
      if (it == r.cells.end()) continue;
      const Cell& c = it->second;
      out << csv_field(r.method_tag) << ',' << csv_field(r.dataset) << ','
          << csv_field(r.granularity) << ',' << col << ',' << fmt("%.6g", c.value) << ','
          << (c.stdev ? fmt("%.6g", *c.stdev) : "") << ',' << c.n << ','
          << (c.delta ? std::to_string(c.delta->rounded) : "") << ',' << digests << '\n';
    }
  }
  return out.str();
}

std::string table_to_markdown(const ResultTable& t) {
  std::vector<std::string> datasets;
  std::vector<std::pair<std::string, std::string>> methods;
  for (const auto& r : t.rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
    const auto key = std::make_pair(r.method_tag, r.granularity);
    if (std::find(methods.begin(), methods.end(), key) == methods.end()) methods.push_back(key);
  }

  std::ostringstream out;
  out << "# Results\n\n";
  for (const auto& d : t.manifest_digests) out << "manifest: `" << d << "`\n";
  if (!t.manifest_digests.empty()) out << '\n';
  for (const auto& col : t.columns) {
    out << "## " << col << "\n\n| method | granularity |";
    for (const auto& d : datasets) out << ' ' << d << " |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < datasets.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& [method, gran] : methods) {
      out << "| " << method << " | " << gran << " |";
      for (const auto& d : datasets) {
        const Cell* cell = nullptr;
        for (const auto& r : t.rows) {
          if (r.method_tag == method && r.granularity == gran && r.dataset == d) {
            auto it = r.cells.find(col);
            if (it != r.cells.end()) cell = &it->second;
          }
        }
        if (!cell) {
          out << " --- |";
          continue;
        }
        out << ' ' << format_value(col, cell->value);
        if (cell->stdev) out << " \xC2\xB1" << format_value(col, *cell->stdev);
        if (cell->delta) out << " (" << (cell->delta->rounded > 0 ? "+" : "") << cell->delta->rounded << "%)";
        out << " |";
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string serialize(const ResultTable& table, TableFormat format) {
  switch (format) {
    case TableFormat::json: return table_to_json(table).dump(2) + "\n";
    case TableFormat::csv: return table_to_csv(table);
    case TableFormat::markdown: return table_to_markdown(table);
  }
  return {};
}

ResultTable table_from_json(const json& j) {
  ResultTable t;
  t.columns = j.at("columns").get<std::vector<std::string>>();
  t.delta_metrics = j.value("delta_metrics", std::vector<std::string>{});
  t.manifest_digests = j.value("manifest_digests", std::vector<std::string>{});
  if (j.contains("baseline_tag") && j["baseline_tag"].is_string()) t.baseline_tag = j["baseline_tag"];
  for (const auto& rj : j.at("rows")) {
    ResultRow r;
    r.method_tag = rj.at("method_tag");
    r.dataset = rj.at("dataset");
    r.granularity = rj.at("granularity");
    for (const auto& [name, cj] : rj.at("cells").items()) {
      Cell c;
      c.value = cj.at("value");
      c.n = cj.at("n");
      if (cj.contains("stdev") && cj["stdev"].is_number()) c.stdev = cj["stdev"].get<double>();
      if (cj.contains("delta")) {
        c.delta = RelativeChange{cj["delta"].at("percent"), cj["delta"].at("rounded")};
      }
      r.cells[name] = c;
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

// --------------------------------------------------------- run aggregation

ResultRow aggregate_run(const std::filesystem::path& run_dir, const ReportOptions& options,
                        std::string* manifest_digest) {
  const json manifest = read_json(run_dir / "manifest.json");
  if (manifest_digest) *manifest_digest = manifest.at("config_digest");
  const auto records = read_records(run_dir / "records.jsonl");

  ResultRow row;
  row.method_tag = manifest.at("compressor_tag");
  row.dataset = manifest.at("dataset");
  const auto& comp = manifest.at("config").at("compressor");
  row.granularity = comp.at("kind") == "soft_service" ? comp.at("granularity").get<std::string>() : "-";

  auto add = [&](const std::string& name, const std::vector<double>& values) {
    if (values.empty()) return;
    Cell c;
    c.n = values.size();
    if (values.size() >= options.set_size) {
      const auto stat = resample_stats(values, options.sets, options.set_size, options.seed, name);
      c.value = stat.mean;
      c.stdev = stat.resample_stdev;
    } else {
      c.value = mean_of(values);
    }
    row.cells[name] = c;
  };
  auto add_count = [&](const std::string& name, std::size_t count, std::size_t n) {
    Cell c;
    c.value = static_cast<double>(count);
    c.n = n;
    row.cells[name] = c;
  };

  std::vector<double> orig, prompt, flops_target, flops_comp;
  std::size_t n_empty = 0, n_failed = 0;
  for (const auto& r : records) {
    if (r.error) {
      ++n_failed;
      continue;
    }
    if (r.is_empty) ++n_empty;
    orig.push_back(static_cast<double>(r.original_prompt_tokens));
    prompt.push_back(static_cast<double>(r.rendered_prompt_tokens));
    flops_target.push_back(
        to_mflops(estimate_flops(options.target_spec, r.rendered_prompt_tokens, r.completion_tokens)));
    if (options.compressor_spec && r.compressed.scored_tokens > 0) {
      flops_comp.push_back(
          to_mflops(estimate_flops(*options.compressor_spec, r.compressed.scored_tokens, 0)));
    }
  }
  add_count("n_empty", n_empty, records.size());
  add_count("n_failed", n_failed, records.size());
  add("original_prompt_tokens", orig);
  add("prompt_tokens", prompt);
  if (!prompt.empty() && mean_of(prompt) > 0) {
    Cell c;
    c.value = mean_of(orig) / mean_of(prompt);
    c.n = prompt.size();
    row.cells["compression_rate"] = c;
  }
  add("flops_target_mflops", flops_target);
  add("flops_compressor_mflops", flops_comp);

  std::vector<double> downstream;
  for (const auto& s : read_jsonl(run_dir / "scores.jsonl")) {
    if (s.at("downstream").is_number()) downstream.push_back(s["downstream"].get<double>());
  }
  add("downstream", downstream);

  const auto grounding = read_jsonl(run_dir / "grounding.jsonl");
  if (!grounding.empty()) {
    std::vector<double> avg, first;
    std::size_t excluded = 0;
    for (const auto& g : grounding) {
      if (!g.contains("result")) continue;
      const auto& res = g["result"];
      if (res.value("excluded_empty", false)) {
        ++excluded;
        continue;
      }
      if (res["avg_score"].is_number()) avg.push_back(res["avg_score"].get<double>());
      if (res["first_claim_score"].is_number()) first.push_back(res["first_claim_score"].get<double>());
    }
    add("grounding_avg", avg);
    add("grounding_first", first);
    add_count("n_grounding_excluded_empty", excluded, grounding.size());
  }

  const auto preservation = read_jsonl(run_dir / "preservation.jsonl");
  if (!preservation.empty()) {
    std::vector<double> bert, r1, rl, ents;
    for (const auto& p : preservation) {
      if (!p.contains("result") || p.at("record").at("status") != "ok") continue;
      const auto& res = p["result"];
      bert.push_back(res["bertscore"]["f1"].get<double>());
      r1.push_back(res["rouge"]["rouge1"]["f1"].get<double>());
      rl.push_back(res["rouge"]["rougeL"]["f1"].get<double>());
      if (res["entity_fraction_overall"].is_number()) {
        ents.push_back(res["entity_fraction_overall"].get<double>());
      }
    }
    add("preservation_bertscore_f1", bert);
    add("preservation_rouge1_f1", r1);
    add("preservation_rougeL_f1", rl);
    add("entity_fraction_overall", ents);
  }
  return row;
}

std::span<const ReferenceCost> reference_compression_costs() {
  static const ReferenceCost kCosts[] = {{"xRAG", 3.7e7}, {"PISCO", 1.3e7}, {"LLMLingua", 6.6e6}};
  return kCosts;
}

}  // namespace pcev
