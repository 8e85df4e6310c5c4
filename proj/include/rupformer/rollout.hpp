#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "rupformer/kpi_data.hpp"
#include "rupformer/model.hpp"

namespace rupf {

/// Sliding input window of the recursive forecaster.
struct RolloutState {
  std::vector<float> window;  // N x 9, normalized
  std::vector<StepMeta> window_meta;
  Timestamp next_timestamp{};
  int carrier_id = 0;
  std::size_t blocks_emitted = 0;
};

/// Window made of the `input_len` records preceding `origin`; the first
/// forecast step is series.records[origin].timestamp.
RolloutState make_rollout_state(const KpiSeries& series, std::size_t origin, const Normalizer& normalizer,
                                std::size_t input_len);

struct QuantileForecast {
  Timestamp timestamp{};
  int carrier_id = 0;
  std::array<float, 3> quantiles{};             // q10, q50, q90 residual ratios
  std::array<float, kNumDeterministic> det_normalized{};  // clipped to [0, 1]
  std::array<double, kNumDeterministic> det{};  // native units

  float median() const { return quantiles[1]; }
};

/// What one recursion step saw and fed back.
struct BlockTrace {
  std::size_t block = 0;
  std::vector<float> window;  // encoder input of this block
  std::vector<StepMeta> window_meta;
  std::vector<std::array<float, kNumFeatures>> fed_back;  // vectors appended after the block
};

using RolloutObserver = std::function<void(const BlockTrace&)>;

/// Emits `horizon` steps in ceil(horizon / M) blocks. Each block's predictions
/// (clipped deterministic features plus the median residual) replace the
/// oldest window entries.
std::vector<QuantileForecast> rollout(const RupFormer& model, const Normalizer& normalizer, RolloutState& state,
                                      std::size_t horizon, const RolloutObserver& observer = {});

void write_forecast_csv(std::ostream& out, std::span<const QuantileForecast> forecasts);
void forecast_to_csv(std::span<const QuantileForecast> forecasts, const std::filesystem::path& path);

}  // namespace rupf
