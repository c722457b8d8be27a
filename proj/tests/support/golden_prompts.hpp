#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixtures.hpp"
#include "pcev/compressor.hpp"
#include "pcev/corpus.hpp"
#include "pcev/pipeline.hpp"
#include "pcev/prompts.hpp"

namespace golden_prompts {

struct Rendered {
  std::string name;
  std::string got;
  std::string expected;
};

// Renders every prompt that has a golden file under golden/prompts: the
// five response templates on their fixture samples (uncompressed), the five
// reconstruction prompts with one slot, and the two judge prompts.
inline std::vector<Rendered> render_all() {
  using namespace pcev;
  const auto dir = fixtures::golden("prompts");
  std::vector<Rendered> out;
  ApproxTokenizer tok;

  std::istringstream lines(fixtures::read_file(dir / "samples.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string kind_name = j.at("task_kind");
    const TaskKind kind = parse_task_kind(kind_name);
    std::istringstream record(j.at("sample").dump());
    const auto loaded = parse_dataset(record, kind, TaskRules{});
    if (loaded.samples.size() != 1) {
      throw std::runtime_error("golden sample for " + kind_name + " did not load");
    }
    const Sample& sample = loaded.samples[0];
    CompressorConfig cfg;
    const auto compressed = compress(cfg, make_compression_input(sample, cfg, tok), {&tok});
    const auto rendered = render_prompt(default_template(kind), sample, compressed, tok);
    const std::string file = "response_" + kind_name + ".txt";
    out.push_back({file, segments_to_text(rendered.segments), fixtures::read_file(dir / file)});
  }

  for (int i = 1; i <= kReconstructionPrompts; ++i) {
    const std::map<std::string, PlaceholderValue> values{
        {"token", std::vector<SlotRef>{SlotRef{"u0.0"}}}};
    const std::string file = "reconstruction_" + std::to_string(i) + ".txt";
    out.push_back({file, segments_to_text(fill_template(reconstruction_template(i), values)),
                   fixtures::read_file(dir / file)});
  }

  out.push_back({"claim_detection.txt",
                 fill_text(claim_detection_template(), {{"summary", "Anna Vissi married Nikos Karvelas."}}),
                 fixtures::read_file(dir / "claim_detection.txt")});
  out.push_back({"faithfulness.txt",
                 fill_text(faithfulness_template(),
                           {{"context", "Anna Vissi is a singer."}, {"statement", "Anna Vissi sings."}}),
                 fixtures::read_file(dir / "faithfulness.txt")});
  return out;
}

}  // namespace golden_prompts
