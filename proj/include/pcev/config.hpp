#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pcev/grounding.hpp"
#include "pcev/pipeline.hpp"
#include "pcev/preservation.hpp"
#include "pcev/report.hpp"

namespace pcev {

// Everything one config file describes. Relative paths resolve against the
// directory holding the file.
struct AppConfig {
  RunConfig run;

  std::string tokenizer_kind = "approx";  // approx | service

  std::optional<EndpointRef> judge;
  GroundingOptions grounding;
  std::size_t judge_max_new_tokens = 500;

  std::string embedder_kind = "hash";  // hash | service
  std::size_t hash_dim = 64;
  std::uint64_t hash_seed = 0;
  std::optional<EndpointRef> embedder;

  std::string extractor_kind = "rule";  // rule | llm
  std::optional<EndpointRef> extractor;

  std::vector<int> reconstruction_prompts{1, 2, 3, 4, 5};
  ReconstructionMode reconstruction_mode = ReconstructionMode::joint;

  ReportOptions report;
  std::optional<std::string> baseline_tag;

  std::optional<std::filesystem::path> cache_dir;
  bool offline = false;
};

// Sectioned key = value file (TOML subset): [dataset], [run], [compressor],
// [target], [scorer], [soft], [judge], [grounding], [embedder],
// [extractor], [reconstruct], [templates], [tokenizer], [report],
// [flops.target], [flops.compressor], [cache]. Unknown keys are errors.
AppConfig parse_config(std::istream& in, const std::filesystem::path& base_dir);
AppConfig load_config(const std::filesystem::path& path);

}  // namespace pcev
