#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenegen/model.hpp"
#include "scenegen/noise_schedule.hpp"
#include "scenegen/sampler.hpp"
#include "scenegen/training.hpp"

namespace scenegen {

struct ScheduleConfig {
  int num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaKind sigma = SigmaKind::beta;

  NoiseSchedule build() const;
};

struct DataConfig {
  std::string train;  // dataset directory or manifest file
  std::string val;
};

// Merged configuration of a run. JSON layout:
//   { "seed", "schedule": {...}, "model": {...}, "text": {...},
//     "fg_weight": {"min", "max", "eta"}, "train": {...},
//     "sampler": {...}, "data": {"train", "val"} }
// Missing keys take their defaults; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  ModelConfig model;
  TrainConfig train;  // train.seed and train.weight_schedule mirror the top level
  SamplerConfig sampler;
  DataConfig data;

  // Throws ConfigError naming the first invalid field of any section.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
std::string config_hash(const nlohmann::json& canonical);

// Human-readable list of differing keys ("train.max_steps: 100 -> 200").
std::vector<std::string> config_diff(const nlohmann::json& before,
                                     const nlohmann::json& after);

}  // namespace scenegen
