#include "pcev/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "pcev/digest.hpp"
#include "pcev/errors.hpp"

#ifndef PCEV_VERSION
#define PCEV_VERSION "dev"
#endif

namespace pcev {

using nlohmann::json;

namespace {

// Where the service lives does not change what it computes, so base_url
// and credentials stay out of digests.
json endpoint_json(const EndpointRef& e) {
  json j{{"model_name", e.model_name},
         {"timeout_ms", e.timeout.count()},
         {"max_retries", e.max_retries},
         {"max_in_flight", e.max_in_flight}};
  if (e.input_truncation) j["input_truncation"] = *e.input_truncation;
  return j;
}

json compressor_json(const CompressorConfig& c) {
  json j{{"kind", std::string(to_string(c.kind))},
         {"granularity", std::string(to_string(c.granularity))},
         {"segment_size", c.segment_size},
         {"demo_keep_fraction_floor", c.demo_keep_fraction_floor},
         {"budget_includes_prompt", c.budget_includes_prompt},
         {"chunk_tokens", c.chunk_tokens}};
  if (c.token_budget) j["token_budget"] = *c.token_budget;
  if (c.slots_per_unit) j["slots_per_unit"] = *c.slots_per_unit;
  if (c.service) j["service"] = endpoint_json(*c.service);
  if (c.scorer) j["scorer"] = endpoint_json(*c.scorer);
  return j;
}

CompressedPrompt compressed_from_json(const json& j) {
  CompressedPrompt p;
  p.kind = j.at("kind") == "slots" ? PromptKind::slots : PromptKind::text;
  p.compressor = parse_compressor_kind(j.at("compressor").get<std::string>());
  p.original_context_tokens = j.at("original_context_tokens");
  p.compressed_context_tokens = j.at("compressed_context_tokens");
  p.tokenizer = j.at("tokenizer");
  p.scored_tokens = j.value("scored_tokens", std::size_t{0});
  if (j.contains("demos")) p.demos = j["demos"].get<std::vector<std::string>>();
  if (p.kind == PromptKind::text) {
    p.text = j.value("text", std::string{});
  } else {
    for (const auto& s : j.at("slots")) {
      p.slots.push_back({s.at("slot_id"), s.at("unit_id"), s.at("position")});
    }
    p.slot_target = j.value("slot_target", "context") == "demos" ? SlotTarget::demos
                                                                  : SlotTarget::context;
  }
  return p;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

}  // namespace

const char* code_version() { return PCEV_VERSION; }

json to_json(const RunConfig& c) {
  json rules{{"keep_only_supporting", c.dataset.rules.keep_only_supporting},
             {"sample_seed", c.dataset.rules.sample_seed}};
  if (c.dataset.rules.max_context_sentences) {
    rules["max_context_sentences"] = *c.dataset.rules.max_context_sentences;
  }
  if (c.dataset.rules.min_turns) rules["min_turns"] = *c.dataset.rules.min_turns;
  if (c.dataset.rules.target_turn_index) {
    rules["target_turn_index"] = *c.dataset.rules.target_turn_index;
  }
  json j{{"dataset",
          {{"name", c.dataset.name},
           {"task_kind", std::string(to_string(c.dataset.task_kind))},
           {"source", c.dataset.source_path.filename().string()},
           {"rules", std::move(rules)}}},
         {"compressor", compressor_json(c.compressor)},
         {"compressor_tag", c.compressor_tag},
         {"target", endpoint_json(c.target)},
         {"seed", c.seed},
         {"max_new_tokens", c.max_new_tokens}};
  if (c.n_samples) j["n_samples"] = *c.n_samples;
  if (c.template_override) j["template_override"] = *c.template_override;
  if (c.no_context_template_override) {
    j["no_context_template_override"] = *c.no_context_template_override;
  }
  return j;
}

std::string config_digest(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

PromptTemplate template_for(const RunConfig& c, bool with_context) {
  const auto& override_text = with_context ? c.template_override : c.no_context_template_override;
  PromptTemplate t = with_context ? default_template(c.dataset.task_kind)
                                  : no_context_template(c.dataset.task_kind);
  t.task_kind = c.dataset.task_kind;
  if (override_text) {
    t.text = *override_text;
    t.answer_prefix.reset();
  }
  validate_template(t, with_context);
  return t;
}

std::string conversational_context(const Sample& sample) {
  std::string out;
  for (const auto& turn : sample.prior_turns()) {
    out += "Question: " + turn.question + "\nAnswer: " + turn.answer + "\n";
  }
  return out;
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const Sample& sample,
                             const CompressedPrompt& compressed, const Tokenizer& tokenizer) {
  std::map<std::string, PlaceholderValue> values;
  std::vector<SlotRef> slots;
  for (const auto& s : compressed.slots) slots.push_back({s.slot_id});
  const bool slot_prompt = compressed.kind == PromptKind::slots;

  if (slot_prompt && compressed.slot_target == SlotTarget::context) {
    values["context"] = slots;
  } else if (compressed.text) {
    values["context"] = *compressed.text;
  }
  if (slot_prompt && compressed.slot_target == SlotTarget::demos) {
    values["icl_demos"] = slots;
  } else {
    values["icl_demos"] = join(compressed.demos, "\n\n");
  }
  if (sample.question) values["question"] = *sample.question;
  values["conv_context"] = conversational_context(sample);

  RenderedPrompt out;
  out.segments = fill_template(tmpl.text, values);
  for (const auto& seg : out.segments) {
    if (const auto* lit = std::get_if<TemplateLiteral>(&seg)) {
      out.tokens += tokenizer.count(lit->text);
    } else {
      ++out.tokens;
      ++out.n_slots;
    }
  }
  return out;
}

json to_json(const GenerationRecord& r) {
  json j{{"sample_id", r.sample_id},
         {"compressor_tag", r.compressor_tag},
         {"original_prompt_tokens", r.original_prompt_tokens},
         {"rendered_prompt_tokens", r.rendered_prompt_tokens},
         {"rendered_prompt", r.rendered_prompt},
         {"response", r.response},
         {"is_empty", r.is_empty},
         {"completion_tokens", r.completion_tokens},
         {"compressed", to_json(r.compressed)}};
  j["error"] = r.error ? json(*r.error) : json(nullptr);
  return j;
}

GenerationRecord record_from_json(const json& j) {
  GenerationRecord r;
  r.sample_id = j.at("sample_id");
  r.compressor_tag = j.at("compressor_tag");
  r.original_prompt_tokens = j.at("original_prompt_tokens");
  r.rendered_prompt_tokens = j.at("rendered_prompt_tokens");
  r.rendered_prompt = j.value("rendered_prompt", std::string{});
  r.response = j.at("response");
  r.is_empty = j.at("is_empty");
  r.completion_tokens = j.value("completion_tokens", std::size_t{0});
  r.compressed = compressed_from_json(j.at("compressed"));
  if (j.contains("error") && j["error"].is_string()) r.error = j["error"].get<std::string>();
  return r;
}

std::vector<Sample> prepare_samples(const RunConfig& config, std::vector<SkippedRecord>* skipped) {
  config.dataset.rules.validate();
  LoadResult loaded = load_dataset(config.dataset);
  if (skipped) *skipped = loaded.skipped;
  auto samples = apply_task_rules(std::move(loaded.samples), config.dataset.rules);
  if (config.n_samples) samples = sample_subset(samples, *config.n_samples, config.seed);
  return samples;
}

CompressorServices CompressorBinding::services(const Tokenizer& tokenizer) const {
  return {&tokenizer, logprobs.get(), soft.get()};
}

CompressorBinding bind_compressor(const CompressorConfig& config, Gateway& gateway) {
  config.validate();
  CompressorBinding b;
  if (config.kind == CompressorKind::hard_prune) {
    if (!config.scorer) throw InvalidArgument("hard_prune needs a scorer endpoint");
    b.logprobs = std::make_unique<GatewayLogprobProvider>(gateway, *config.scorer);
  }
  if (config.kind == CompressorKind::soft_service) {
    b.soft = std::make_unique<GatewaySoftEncoder>(gateway, *config.service);
  }
  return b;
}

GenerationRecord generate_one(const RunConfig& config, const Sample& sample, Gateway& gateway,
                              const CompressorBinding& binding) {
  const Tokenizer& tok = gateway.tokenizer();
  GenerationRecord rec;
  rec.sample_id = sample.id;
  rec.compressor_tag = config.compressor_tag;

  const bool with_context = config.compressor.kind != CompressorKind::drop_context;
  const PromptTemplate full = template_for(config, true);
  const PromptTemplate tmpl = with_context ? full : template_for(config, false);

  CompressionInput input = make_compression_input(sample, config.compressor, tok);
  input.instruction_tokens =
      tok.count(fill_text(full.text, {{"context", ""}, {"question", ""}, {"icl_demos", ""},
                                      {"conv_context", ""}}));

  CompressorConfig plain;
  const CompressedPrompt original = compress(plain, input, {&tok, nullptr, nullptr});
  rec.original_prompt_tokens = render_prompt(full, sample, original, tok).tokens;

  auto t0 = std::chrono::steady_clock::now();
  rec.compressed = compress(config.compressor, input, binding.services(tok));
  rec.timings.compress_ms = elapsed_ms(t0);

  const RenderedPrompt rendered = render_prompt(tmpl, sample, rec.compressed, tok);
  rec.rendered_prompt_tokens = rendered.tokens;
  rec.rendered_prompt = segments_to_text(rendered.segments);

  ChatRequest req;
  req.temperature = 0.0;
  req.max_new_tokens = config.max_new_tokens;
  t0 = std::chrono::steady_clock::now();
  const ChatResult result = gateway.generate_with_slots(config.target, rendered.segments, req);
  rec.timings.generate_ms = elapsed_ms(t0);
  rec.response = result.text;
  rec.is_empty = is_blank(result.text);
  rec.completion_tokens = result.completion_tokens;
  return rec;
}

RunResult run_generation(const RunConfig& config, Gateway& gateway) {
  RunResult out;
  std::vector<SkippedRecord> skipped;
  out.samples = prepare_samples(config, &skipped);
  const CompressorBinding binding = bind_compressor(config.compressor, gateway);

  out.records.resize(out.samples.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < out.samples.size(); i = next++) {
      try {
        out.records[i] = generate_one(config, out.samples[i], gateway, binding);
      } catch (const std::exception& e) {
        GenerationRecord failed;
        failed.sample_id = out.samples[i].id;
        failed.compressor_tag = config.compressor_tag;
        failed.compressed.compressor = config.compressor.kind;
        failed.compressed.tokenizer = gateway.tokenizer().name();
        failed.error = e.what();
        out.records[i] = std::move(failed);
      }
    }
  };
  const std::size_t n_workers =
      std::max<std::size_t>(1, std::min(config.target.max_in_flight, out.samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::sort(out.records.begin(), out.records.end(),
            [](const GenerationRecord& a, const GenerationRecord& b) {
              return a.sample_id < b.sample_id;
            });
  out.n_failed = static_cast<std::size_t>(std::count_if(
      out.records.begin(), out.records.end(), [](const auto& r) { return r.error.has_value(); }));
  out.degraded = out.n_failed * 10 > out.records.size();

  json skipped_json = json::array();
  for (const auto& s : skipped) {
    skipped_json.push_back({{"line", s.line}, {"id", s.id}, {"reason", s.reason}});
  }
  out.manifest = {{"code_version", code_version()},
                  {"config_digest", config_digest(config)},
                  {"config", to_json(config)},
                  {"dataset", config.dataset.name},
                  {"task_kind", std::string(to_string(config.dataset.task_kind))},
                  {"compressor_tag", config.compressor_tag},
                  {"tokenizer", gateway.tokenizer().name()},
                  {"n_samples", out.records.size()},
                  {"n_failed", out.n_failed},
                  {"degraded", out.degraded},
                  {"skipped_records", std::move(skipped_json)}};
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_run(const RunResult& result, const std::filesystem::path& dir,
               const Gateway::Stats& stats) {
  std::string records, timings;
  double total_ms = 0;
  for (const auto& r : result.records) {
    records += to_json(r).dump() + "\n";
    timings += json{{"sample_id", r.sample_id},
                    {"compress_ms", r.timings.compress_ms},
                    {"generate_ms", r.timings.generate_ms}}
                   .dump() +
               "\n";
    total_ms += r.timings.compress_ms + r.timings.generate_ms;
  }
  write_text_file(dir / "records.jsonl", records);
  write_text_file(dir / "manifest.json", result.manifest.dump(2) + "\n");
  write_text_file(dir / "timings.jsonl", timings);
  write_text_file(dir / "run_stats.json",
                  json{{"network_calls", stats.network_calls},
                       {"cache_hits", stats.cache_hits},
                       {"sample_ms_total", total_ms}}
                          .dump(2) +
                      "\n");
}

std::vector<GenerationRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<GenerationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    out.push_back(record_from_json(json::parse(line)));
  }
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

}  // namespace pcev
