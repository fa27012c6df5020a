#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "slicemap/generate.hpp"
#include "slicemap/model.hpp"
#include "slicemap/phantom.hpp"

namespace slicemap {

struct DataSettings {
  std::string train;       // directory of .vol files
  std::string validation;  // optional
};

struct GenerateSettings {
  std::size_t samples = 32;
  GenerationMode mode = GenerationMode::average;
  std::uint64_t seed = 0;
};

struct EvalSettings {
  std::vector<std::size_t> context_counts{0, 1, 2, 4};
  std::size_t samples = 32;
  GenerationMode mode = GenerationMode::average;
  std::uint64_t seed = 0;
  std::size_t motion = 0;  // max translation in voxels; 0 skips the motion rows
  std::size_t motion_stacks = 3;
  std::size_t motion_contexts = 4;
  double blur_sigma = 1.0;
};

// Everything an experiment needs. Command-line flags override these values.
struct RunConfig {
  ModelConfig model;
  PhantomSpec phantom;
  DataSettings data;
  GenerateSettings generate;
  EvalSettings eval;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Missing keys keep their defaults; unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

// Throws ConfigError for unreadable files, malformed JSON or invalid values.
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& c);

}  // namespace slicemap
