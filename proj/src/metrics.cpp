#include "rupformer/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"

namespace rupf {

namespace {

void require_lengths(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  }
  if (a == 0) throw DomainError(std::string(op) + ": empty input");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double mae(std::span<const double> truth, std::span<const double> median_pred) {
  require_lengths(truth.size(), median_pred.size(), "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - median_pred[i]);
  return s / static_cast<double>(truth.size());
}

double hit_probability(std::span<const double> truth, std::span<const double> lower, std::span<const double> upper) {
  require_lengths(truth.size(), lower.size(), "hit_probability");
  require_lengths(truth.size(), upper.size(), "hit_probability");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (lower[i] > upper[i]) {
      throw DomainError("hit_probability: interval crosses at step " + std::to_string(i));
    }
    if (lower[i] <= truth[i] && truth[i] <= upper[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double abs_err_std(std::span<const double> truth, std::span<const double> median_pred) {
  require_lengths(truth.size(), median_pred.size(), "abs_err_std");
  if (truth.size() < 2) throw DomainError("abs_err_std: needs at least two steps");
  std::vector<double> err(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) err[i] = std::abs(truth[i] - median_pred[i]);
  return population_std(err);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_carrier = nlohmann::json::array();
  for (const auto& c : carriers) {
    per_carrier.push_back({{"carrier_id", c.carrier_id},
                           {"mae", c.mae},
                           {"abs_err_std", c.abs_err_std},
                           {"hit_prob", c.hit_prob},
                           {"persistence_mae", c.persistence_mae},
                           {"horizon", c.horizon},
                           {"anchors", c.anchors}});
  }
  return {{"per_carrier", per_carrier},
          {"aggregate",
           {{"mean_mae", mean_mae},
            {"mae_std", mae_std},
            {"mean_hit_prob", mean_hit_prob},
            {"mean_persistence_mae", mean_persistence_mae}}},
          {"metadata",
           {{"model_hash", model_hash},
            {"data_start", format_timestamp(data_start)},
            {"data_end", format_timestamp(data_end)},
            {"horizon", horizon},
            {"anchors", anchors}}}};
}

std::vector<std::size_t> anchor_positions(std::size_t series_len, std::size_t input_len, std::size_t horizon,
                                          std::size_t anchors) {
  if (anchors == 0) throw DomainError("evaluate: at least one anchor is required");
  if (series_len < input_len + horizon) {
    throw DomainError("evaluate: anchor out of range, series of " + std::to_string(series_len) + " steps cannot hold " +
                      std::to_string(input_len) + " history + " + std::to_string(horizon) + " horizon steps");
  }
  const std::size_t first = input_len;
  const std::size_t last = series_len - horizon;
  if (anchors > last - first + 1) {
    throw DomainError("evaluate: " + std::to_string(anchors) + " anchors requested but only " +
                      std::to_string(last - first + 1) + " origins fit");
  }
  std::vector<std::size_t> out;
  if (anchors == 1) return {first};
  for (std::size_t i = 0; i < anchors; ++i) {
    out.push_back(first + (i * (last - first)) / (anchors - 1));
  }
  return out;
}

EvalReport evaluate(const RupFormer& model, const Normalizer& normalizer, std::span<const KpiSeries> test_series,
                    std::size_t horizon, std::size_t anchors, const std::string& model_hash,
                    std::vector<Trajectory>* trajectories) {
  if (test_series.empty()) throw DomainError("evaluate: no test series");
  EvalReport report;
  report.model_hash = model_hash;
  report.horizon = horizon;
  report.anchors = anchors;
  report.data_start = Timestamp::max();
  report.data_end = Timestamp::min();
  const std::size_t n = model.hyperparams().input_len;

  for (const auto& series : test_series) {
    if (series.records.empty()) throw DomainError("evaluate: empty series for carrier " + std::to_string(series.carrier_id));
    report.data_start = std::min(report.data_start, series.records.front().timestamp);
    report.data_end = std::max(report.data_end, series.records.back().timestamp);
    CarrierEval ce;
    ce.carrier_id = series.carrier_id;
    ce.horizon = horizon;
    const auto origins = anchor_positions(series.records.size(), n, horizon, anchors);
    ce.anchors = origins.size();
    for (std::size_t origin : origins) {
      RolloutState state = make_rollout_state(series, origin, normalizer, n);
      const auto forecast = rollout(model, normalizer, state, horizon);
      std::vector<double> truth(horizon), median(horizon), lo(horizon), hi(horizon), persist(horizon);
      const double last_observed = series.records[origin - 1].residual_prb;
      for (std::size_t k = 0; k < horizon; ++k) {
        truth[k] = series.records[origin + k].residual_prb;
        lo[k] = forecast[k].quantiles[0];
        median[k] = forecast[k].quantiles[1];
        hi[k] = forecast[k].quantiles[2];
        persist[k] = last_observed;
      }
      ce.mae += mae(truth, median);
      ce.abs_err_std += horizon >= 2 ? abs_err_std(truth, median) : 0.0;
      ce.hit_prob += hit_probability(truth, lo, hi);
      ce.persistence_mae += mae(truth, persist);
      if (trajectories) trajectories->push_back({series.carrier_id, origin, std::move(truth), forecast});
    }
    const auto count = static_cast<double>(origins.size());
    ce.mae /= count;
    ce.abs_err_std /= count;
    ce.hit_prob /= count;
    ce.persistence_mae /= count;
    report.carriers.push_back(ce);
  }

  std::vector<double> maes, hits, persists;
  for (const auto& c : report.carriers) {
    maes.push_back(c.mae);
    hits.push_back(c.hit_prob);
    persists.push_back(c.persistence_mae);
  }
  report.mean_mae = mean_of(maes);
  report.mae_std = population_std(maes);
  report.mean_hit_prob = mean_of(hits);
  report.mean_persistence_mae = mean_of(persists);
  return report;
}

std::string render_plot_svg(std::span<const double> truth, std::span<const QuantileForecast> forecast,
                            const std::string& title) {
  if (truth.empty() || forecast.empty()) throw DomainError("emit_plot_svg: empty series");
  if (truth.size() != forecast.size()) {
    throw DimensionError("emit_plot_svg: " + std::to_string(truth.size()) + " truth values vs " +
                         std::to_string(forecast.size()) + " forecast steps");
  }
  constexpr double kWidth = 900.0;
  constexpr double kHeight = 360.0;
  constexpr double kLeft = 60.0;
  constexpr double kRight = 20.0;
  constexpr double kTop = 30.0;
  constexpr double kBottom = 40.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const std::size_t k = truth.size();
  auto x_of = [&](std::size_t i) { return kLeft + (k == 1 ? 0.0 : plot_w * static_cast<double>(i) / static_cast<double>(k - 1)); };
  auto y_of = [&](double v) { return kTop + (1.0 - std::clamp(v, 0.0, 1.0)) * plot_h; };
  auto point = [](double x, double y) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f", x, y);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  if (!title.empty()) {
    std::string escaped;
    for (char c : title) {
      switch (c) {
        case '<': escaped += "&lt;"; break;
        case '>': escaped += "&gt;"; break;
        case '&': escaped += "&amp;"; break;
        case '"': escaped += "&quot;"; break;
        default: escaped += c;
      }
    }
    os << "<text x=\"" << kLeft << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << escaped << "</text>\n";
  }
  // Axes with 0 / 0.5 / 1 ticks.
  os << "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
     << kTop + plot_h << "\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h << "\"/>\n"
     << "</g>\n";
  for (double tick : {0.0, 0.5, 1.0}) {
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << y_of(tick) + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  os << "<text x=\"" << kLeft << "\" y=\"" << kHeight - 10 << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << format_timestamp(forecast.front().timestamp) << "</text>\n"
     << "<text x=\"" << kLeft + plot_w << "\" y=\"" << kHeight - 10
     << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << format_timestamp(forecast.back().timestamp)
     << "</text>\n";

  os << "<polygon id=\"band\" fill=\"#4a90d9\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < k; ++i) os << (i ? " " : "") << point(x_of(i), y_of(forecast[i].quantiles[2]));
  for (std::size_t i = k; i-- > 0;) os << ' ' << point(x_of(i), y_of(forecast[i].quantiles[0]));
  os << "\"/>\n";

  os << "<polyline id=\"truth\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < k; ++i) os << (i ? " " : "") << point(x_of(i), y_of(truth[i]));
  os << "\"/>\n";
  os << "<polyline id=\"median\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < k; ++i) os << (i ? " " : "") << point(x_of(i), y_of(forecast[i].quantiles[1]));
  os << "\"/>\n";
  os << "</svg>\n";
  return os.str();
}

void emit_plot_svg(std::span<const double> truth, std::span<const QuantileForecast> forecast,
                   const std::filesystem::path& path, const std::string& title) {
  write_file_atomic(path, render_plot_svg(truth, forecast, title));
}

}  // namespace rupf
