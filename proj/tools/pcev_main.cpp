// Command-line front end: run, score, ground, reconstruct, report,
// preservation-set and mock-serve.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "pcev/config.hpp"
#include "pcev/errors.hpp"
#include "pcev/gateway.hpp"
#include "pcev/grounding.hpp"
#include "pcev/mock_server.hpp"
#include "pcev/pipeline.hpp"
#include "pcev/preservation.hpp"
#include "pcev/report.hpp"

#include <CLI11.hpp>

namespace {

using nlohmann::json;
using namespace pcev;

constexpr int kExitError = 1;
constexpr int kExitDegraded = 3;

struct Globals {
  std::string config;
  std::string cache_dir;
  std::optional<std::uint64_t> seed;
  bool offline = false;
  std::string run_dir;
};

AppConfig load(const Globals& g) {
  if (g.config.empty()) throw InvalidArgument("--config is required");
  AppConfig c = load_config(g.config);
  if (!g.cache_dir.empty()) c.cache_dir = g.cache_dir;
  if (g.offline) c.offline = true;
  if (g.seed) {
    c.run.seed = *g.seed;
    c.report.seed = *g.seed;
  }
  if (!g.run_dir.empty()) c.run.output_dir = g.run_dir;
  return c;
}

std::unique_ptr<Gateway> make_gateway(const AppConfig& c) {
  GatewayOptions opts;
  opts.cache_dir = c.cache_dir;
  opts.offline = c.offline;
  auto gw = std::make_unique<Gateway>(std::make_shared<HttpTransport>(),
                                      std::make_shared<ApproxTokenizer>(), opts);
  if (c.tokenizer_kind == "service") {
    gw->set_tokenizer(std::make_shared<ServiceTokenizer>(*gw, c.run.target));
  }
  return gw;
}

std::unique_ptr<TokenEmbedder> make_embedder(const AppConfig& c, Gateway& gw) {
  if (c.embedder) return std::make_unique<GatewayEmbedder>(gw, *c.embedder);
  return std::make_unique<HashEmbedder>(c.hash_dim, c.hash_seed);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
// exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(std::max<std::size_t>(workers, 1), n); ++k) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::map<std::string, Sample> samples_by_id(const RunConfig& run) {
  std::map<std::string, Sample> out;
  for (auto& s : prepare_samples(run)) out.emplace(s.id, std::move(s));
  return out;
}

const Sample& find_sample(const std::map<std::string, Sample>& samples, const std::string& id) {
  auto it = samples.find(id);
  if (it == samples.end()) throw InvalidArgument("record '" + id + "' has no matching sample");
  return it->second;
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  std::string out;
  for (const auto& l : lines) out += l.dump() + "\n";
  write_text_file(path, out);
}

// ----------------------------------------------------------------- commands

int cmd_run(const Globals& g) {
  const AppConfig c = load(g);
  auto gw = make_gateway(c);
  const RunResult result = run_generation(c.run, *gw);
  write_run(result, c.run.output_dir, gw->stats());
  std::size_t empty = 0;
  for (const auto& r : result.records) empty += (!r.error && r.is_empty);
  std::printf("run: %zu records, %zu empty, %zu failed -> %s\n", result.records.size(), empty,
              result.n_failed, c.run.output_dir.string().c_str());
  if (result.degraded) {
    std::fprintf(stderr, "run degraded: %zu of %zu samples failed\n", result.n_failed,
                 result.records.size());
    return kExitDegraded;
  }
  return 0;
}

int cmd_score(const Globals& g) {
  const AppConfig c = load(g);
  auto gw = make_gateway(c);
  auto embedder = make_embedder(c, *gw);
  const auto samples = samples_by_id(c.run);
  const auto records = read_records(c.run.output_dir / "records.jsonl");
  const TaskKind kind = c.run.dataset.task_kind;
  const EmConfig em = default_em_config(kind);
  std::vector<json> lines;
  double total = 0;
  std::size_t n = 0;
  for (const auto& r : records) {
    const SampleScore s = score_record(r, find_sample(samples, r.sample_id), kind, em, *embedder);
    if (s.downstream) {
      total += *s.downstream;
      ++n;
    }
    lines.push_back(to_json(s));
  }
  write_lines(c.run.output_dir / "scores.jsonl", lines);
  std::printf("score: %zu scored, mean %.4f\n", n, n ? total / static_cast<double>(n) : 0.0);
  return 0;
}

int cmd_ground(const Globals& g) {
  const AppConfig c = load(g);
  if (!c.judge) throw InvalidArgument("ground needs a [judge] section");
  auto gw = make_gateway(c);
  GatewayJudge judge(*gw, *c.judge, c.judge_max_new_tokens);
  const auto samples = samples_by_id(c.run);
  const auto records = read_records(c.run.output_dir / "records.jsonl");
  std::vector<json> lines(records.size());
  parallel_for(records.size(), c.judge->max_in_flight, [&](std::size_t i) {
    const auto& r = records[i];
    json line{{"sample_id", r.sample_id}};
    if (r.error) {
      line["error"] = "generation failed";
    } else {
      try {
        const auto sentences = find_sample(samples, r.sample_id).context_sentences();
        line["result"] = to_json(grounding_score(r.response, sentences, judge, c.grounding));
      } catch (const std::exception& e) {
        line["error"] = e.what();
      }
    }
    lines[i] = std::move(line);
  });
  write_lines(c.run.output_dir / "grounding.jsonl", lines);
  std::size_t failed = 0;
  for (const auto& l : lines) failed += l.contains("error");
  std::printf("ground: %zu responses, %zu failed\n", lines.size(), failed);
  return 0;
}

int cmd_reconstruct(const Globals& g) {
  const AppConfig c = load(g);
  auto gw = make_gateway(c);
  auto embedder = make_embedder(c, *gw);
  std::unique_ptr<Judge> extractor_model;
  std::unique_ptr<EntityExtractor> extractor;
  if (c.extractor) {
    extractor_model = std::make_unique<GatewayJudge>(*gw, *c.extractor);
    extractor = std::make_unique<LlmEntityExtractor>(*extractor_model);
  } else {
    extractor = std::make_unique<RuleEntityExtractor>();
  }
  const auto samples = samples_by_id(c.run);
  const auto records = read_records(c.run.output_dir / "records.jsonl");
  const auto binding = bind_compressor(c.run.compressor, *gw);
  const Tokenizer& tok = gw->tokenizer();
  const auto services = binding.services(tok);

  ChatRequest req;
  req.max_new_tokens = c.run.max_new_tokens;
  const SlotGenerateFn generate = [&](std::span<const TemplateSegment> segments) {
    return gw->generate_with_slots(c.run.target, segments, req).text;
  };

  const std::size_t per = c.reconstruction_prompts.size();
  std::vector<json> lines(records.size() * per);
  parallel_for(records.size(), c.run.target.max_in_flight, [&](std::size_t i) {
    const auto& r = records[i];
    if (r.error) {
      for (std::size_t k = 0; k < per; ++k) {
        lines[i * per + k] = {{"sample_id", r.sample_id}, {"error", "generation failed"}};
      }
      return;
    }
    // Compressing again reissues the same slot ids through the cache and
    // registers them with this process's gateway.
    const auto input = make_compression_input(find_sample(samples, r.sample_id), c.run.compressor, tok);
    const CompressedPrompt compressed = compress(c.run.compressor, input, services);
    const auto units = soft_units(c.run.compressor, input, tok);
    for (std::size_t k = 0; k < per; ++k) {
      json line;
      try {
        ReconstructionRecord rec =
            reconstruct(compressed, units, c.reconstruction_prompts[k], generate, c.reconstruction_mode);
        rec.sample_id = r.sample_id;
        rec.granularity = c.run.compressor.granularity;
        line["record"] = to_json(rec);
        if (rec.status == ReconstructionStatus::ok) {
          line["result"] = to_json(evaluate_preservation(rec, *extractor, *embedder));
        }
      } catch (const std::exception& e) {
        line = {{"sample_id", r.sample_id}, {"prompt_id", c.reconstruction_prompts[k]}, {"error", e.what()}};
      }
      lines[i * per + k] = std::move(line);
    }
  });
  write_lines(c.run.output_dir / "preservation.jsonl", lines);
  std::size_t ok = 0;
  for (const auto& l : lines) ok += l.contains("result");
  std::printf("reconstruct: %zu reconstructions, %zu evaluated\n", lines.size(), ok);
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& runs, const std::string& format,
               const std::string& out, const std::string& baseline) {
  std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
  ReportOptions options;
  std::optional<std::string> baseline_tag;
  if (!g.config.empty()) {
    const AppConfig c = load(g);
    options = c.report;
    baseline_tag = c.baseline_tag;
    if (dirs.empty()) dirs.push_back(c.run.output_dir);
  } else if (g.seed) {
    options.seed = *g.seed;
  }
  if (!baseline.empty()) baseline_tag = baseline;
  if (dirs.empty()) throw InvalidArgument("report needs --run or --config");

  std::vector<ResultRow> rows;
  std::vector<std::string> digests;
  for (const auto& d : dirs) {
    std::string digest;
    rows.push_back(aggregate_run(d, options, &digest));
    digests.push_back(digest);
  }
  ResultTable table = build_table(std::move(rows), baseline_tag);
  table.manifest_digests = digests;
  const std::string text = serialize(table, parse_table_format(format));
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_file(out, text);
    std::printf("report: %zu rows -> %s\n", table.rows.size(), out.c_str());
  }
  return 0;
}

int cmd_preservation_set(const Globals& g, const std::string& out, std::size_t per_bucket) {
  const AppConfig c = load(g);
  RunConfig run = c.run;
  run.n_samples.reset();
  PreservationSetOptions options;
  options.per_bucket = per_bucket;
  options.seed = run.seed;
  const auto set = build_preservation_set(prepare_samples(run), options);
  std::vector<json> lines;
  for (const auto& s : set) lines.push_back(to_json(s));
  write_lines(out, lines);
  std::printf("preservation-set: %zu samples -> %s\n", set.size(), out.c_str());
  return 0;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_mock_serve(const std::string& host, int port, bool no_logprobs, const std::string& port_file) {
  MockOptions options;
  options.host = host;
  options.port = port;
  options.logprobs = !no_logprobs;
  MockServer server(options);
  const int bound = server.start();
  std::printf("%s\n", server.base_url().c_str());
  std::fflush(stdout);
  if (!port_file.empty()) write_text_file(port_file, std::to_string(bound) + "\n");
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-compression evaluation harness"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  Globals g;
  app.add_option("-c,--config", g.config, "Run configuration file");
  app.add_option("--cache-dir", g.cache_dir, "Response cache directory");
  app.add_option("--seed", g.seed, "Override the sampling and resampling seed");
  app.add_flag("--offline", g.offline, "Fail on cache misses instead of calling services");

  auto* run = app.add_subcommand("run", "Compress prompts and generate responses");
  auto* score = app.add_subcommand("score", "Score responses against references");
  auto* ground = app.add_subcommand("ground", "Judge responses for grounding in the context");
  auto* recon = app.add_subcommand("reconstruct", "Reconstruct soft prompts and score preservation");
  for (auto* sub : {run, score, ground, recon}) {
    sub->add_option("--run-dir", g.run_dir, "Override the run output directory");
  }

  auto* report = app.add_subcommand("report", "Aggregate run directories into a result table");
  std::vector<std::string> report_runs;
  std::string report_format = "markdown";
  std::string report_out;
  std::string report_baseline;
  report->add_option("--run", report_runs, "Run directory (repeatable)");
  report->add_option("--format", report_format, "json, csv or markdown")
      ->check(CLI::IsMember({"json", "csv", "markdown", "md"}));
  report->add_option("--out", report_out, "Output file (default stdout)");
  report->add_option("--baseline", report_baseline, "Method tag deltas are computed against");

  auto* pset = app.add_subcommand("preservation-set", "Build the 1/5/10-sentence evaluation set");
  std::string pset_out;
  std::size_t pset_per_bucket = 150;
  pset->add_option("--out", pset_out, "Output JSONL file")->required();
  pset->add_option("--per-bucket", pset_per_bucket, "Samples per sentence bucket");

  auto* mock = app.add_subcommand("mock-serve", "Serve the offline mock services");
  std::string mock_host = "127.0.0.1";
  int mock_port = 0;
  bool mock_no_logprobs = false;
  std::string mock_port_file;
  mock->add_option("--host", mock_host, "Bind address");
  mock->add_option("--port", mock_port, "Port (0 picks a free one)");
  mock->add_flag("--no-logprobs", mock_no_logprobs, "Answer completions without logprobs");
  mock->add_option("--port-file", mock_port_file, "Write the bound port to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(g);
    if (*score) return cmd_score(g);
    if (*ground) return cmd_ground(g);
    if (*recon) return cmd_reconstruct(g);
    if (*report) return cmd_report(g, report_runs, report_format, report_out, report_baseline);
    if (*pset) return cmd_preservation_set(g, pset_out, pset_per_bucket);
    if (*mock) return cmd_mock_serve(mock_host, mock_port, mock_no_logprobs, mock_port_file);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\nraw output: %s\n", e.what(), e.raw().c_str());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
