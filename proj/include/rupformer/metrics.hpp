#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rupformer/kpi_data.hpp"
#include "rupformer/model.hpp"
#include "rupformer/rollout.hpp"

namespace rupf {

/// Mean absolute error of the median forecast.
double mae(std::span<const double> truth, std::span<const double> median_pred);

/// Fraction of steps with lower <= truth <= upper (bounds inclusive).
double hit_probability(std::span<const double> truth, std::span<const double> lower, std::span<const double> upper);

/// Population standard deviation of |truth - median_pred|.
double abs_err_std(std::span<const double> truth, std::span<const double> median_pred);

struct CarrierEval {
  int carrier_id = 0;
  double mae = 0.0;
  double abs_err_std = 0.0;
  double hit_prob = 0.0;
  double persistence_mae = 0.0;  // last observed residual held constant
  std::size_t horizon = 0;
  std::size_t anchors = 0;
};

struct EvalReport {
  std::vector<CarrierEval> carriers;
  double mean_mae = 0.0;
  double mae_std = 0.0;  // population std of per-carrier MAE
  double mean_hit_prob = 0.0;
  double mean_persistence_mae = 0.0;
  std::string model_hash;
  Timestamp data_start{};
  Timestamp data_end{};
  std::size_t horizon = 0;
  std::size_t anchors = 0;

  nlohmann::json to_json() const;
};

/// One rollout used in an evaluation, kept for plotting.
struct Trajectory {
  int carrier_id = 0;
  std::size_t origin = 0;
  std::vector<double> truth;
  std::vector<QuantileForecast> forecast;
};

/// Forecast origins spread evenly over [N, len - K]; a single anchor uses the
/// earliest origin.
std::vector<std::size_t> anchor_positions(std::size_t series_len, std::size_t input_len, std::size_t horizon,
                                          std::size_t anchors);

/// Recursive rollouts from each anchor of each series; metrics on residual_prb
/// averaged uniformly over anchors, then over carriers.
EvalReport evaluate(const RupFormer& model, const Normalizer& normalizer, std::span<const KpiSeries> test_series,
                    std::size_t horizon, std::size_t anchors, const std::string& model_hash = {},
                    std::vector<Trajectory>* trajectories = nullptr);

/// Median line, q10-q90 band polygon and ground truth as a standalone SVG.
std::string render_plot_svg(std::span<const double> truth, std::span<const QuantileForecast> forecast,
                            const std::string& title = {});
void emit_plot_svg(std::span<const double> truth, std::span<const QuantileForecast> forecast,
                   const std::filesystem::path& path, const std::string& title = {});

}  // namespace rupf
