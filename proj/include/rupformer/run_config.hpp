#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "rupformer/kpi_data.hpp"
#include "rupformer/model.hpp"
#include "rupformer/trainer.hpp"

namespace rupf {

/// Settings for the synthetic generator used by `gen`.
struct SynthSettings {
  int carriers = 3;
  int days = 90;
  std::string start = "2024-01-01T00:00:00Z";
};

struct DataConfig {
  std::optional<std::string> csv_path;
  SynthSettings synth;
};

/// Chronological split in days. Defaults follow the reference protocol:
/// roughly five months of training, then 15 days each of validation and test.
struct SplitDays {
  double train_days = 150.0;
  double val_days = 15.0;
  double test_days = 15.0;
};

/// One run's configuration document. Absent keys take the defaults above;
/// unknown keys are rejected.
struct RunConfig {
  Hyperparams hyperparams;
  TrainConfig train;
  DataConfig data;
  SplitDays split;
  std::uint64_t seed = 0;
};

nlohmann::json hyperparams_to_json(const Hyperparams& hp);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

/// `include_seed` controls whether the seed is part of the object (checkpoint
/// headers carry it; run configs hold it at top level instead).
nlohmann::json train_config_to_json(const TrainConfig& cfg, bool include_seed = true);
TrainConfig train_config_from_json(const nlohmann::json& j, bool allow_seed = true);

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace rupf
