#include "rupformer/rollout.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>
#include <sstream>

#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"

namespace rupf {

RolloutState make_rollout_state(const KpiSeries& series, std::size_t origin, const Normalizer& normalizer,
                                std::size_t input_len) {
  if (origin < input_len || origin > series.records.size()) {
    throw DomainError("rollout: origin " + std::to_string(origin) + " needs " + std::to_string(input_len) +
                      " preceding observations for carrier " + std::to_string(series.carrier_id));
  }
  RolloutState state;
  state.carrier_id = series.carrier_id;
  for (std::size_t i = origin - input_len; i < origin; ++i) {
    const auto& r = series.records[i];
    const auto f = normalized_features(r, normalizer);
    state.window.insert(state.window.end(), f.begin(), f.end());
    state.window_meta.push_back(step_meta(r.timestamp, r.carrier_id));
  }
  state.next_timestamp = state.window_meta.back().time + kStep;
  return state;
}

std::vector<QuantileForecast> rollout(const RupFormer& model, const Normalizer& normalizer, RolloutState& state,
                                      std::size_t horizon, const RolloutObserver& observer) {
  const auto& hp = model.hyperparams();
  const std::size_t n = hp.input_len;
  const std::size_t m = hp.output_len;
  if (horizon < 1) throw DomainError("rollout: horizon must be at least 1");
  if (state.window.size() != n * kNumFeatures || state.window_meta.size() != n) {
    throw DimensionError("rollout: window holds " + std::to_string(state.window_meta.size()) + " steps, model needs " +
                         std::to_string(n));
  }

  std::vector<QuantileForecast> out;
  out.reserve(horizon);
  const std::size_t blocks = (horizon + m - 1) / m;
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<StepMeta> future;
    for (std::size_t k = 0; k < m; ++k) {
      future.push_back(step_meta(state.next_timestamp + kStep * static_cast<std::int64_t>(k), state.carrier_id));
    }
    const DecoderOutput pred = model.forward_block(state.window, state.window_meta, future);

    BlockTrace trace;
    if (observer) {
      trace.block = state.blocks_emitted;
      trace.window = state.window;
      trace.window_meta = state.window_meta;
    }
    std::vector<float> appended;
    for (std::size_t k = 0; k < m; ++k) {
      std::array<float, kNumFeatures> fed{};
      QuantileForecast f;
      f.timestamp = future[k].time;
      f.carrier_id = state.carrier_id;
      for (std::size_t q = 0; q < 3; ++q) f.quantiles[q] = pred.quantiles.at(k * 3 + q);
      for (std::size_t i = 0; i < kNumDeterministic; ++i) {
        const float v = std::clamp(pred.det.at(k * kNumDeterministic + i), 0.0F, 1.0F);
        f.det_normalized[i] = v;
        f.det[i] = normalizer.invert_feature(i, v);
        fed[i] = v;
      }
      fed[kResidualIndex] = f.median();
      appended.insert(appended.end(), fed.begin(), fed.end());
      if (observer) trace.fed_back.push_back(fed);
      if (out.size() < horizon) out.push_back(f);
    }

    // Slide: keep the newest N of (window ++ predictions).
    std::vector<float> merged = state.window;
    merged.insert(merged.end(), appended.begin(), appended.end());
    std::vector<StepMeta> merged_meta = state.window_meta;
    merged_meta.insert(merged_meta.end(), future.begin(), future.end());
    state.window.assign(merged.end() - static_cast<std::ptrdiff_t>(n * kNumFeatures), merged.end());
    state.window_meta.assign(merged_meta.end() - static_cast<std::ptrdiff_t>(n), merged_meta.end());
    state.next_timestamp += kStep * static_cast<std::int64_t>(m);
    ++state.blocks_emitted;
    if (observer) observer(trace);
  }
  return out;
}

namespace {

template <typename T>
void put_number(std::ostream& out, T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, ptr - buf);
}

}  // namespace

void write_forecast_csv(std::ostream& out, std::span<const QuantileForecast> forecasts) {
  out << "timestamp,carrier_id,q10,q50,q90";
  for (std::size_t i = 0; i < kNumDeterministic; ++i) out << ',' << kFeatureNames[i];
  out << '\n';
  for (const auto& f : forecasts) {
    out << format_timestamp(f.timestamp) << ',' << f.carrier_id;
    for (float q : f.quantiles) {
      out << ',';
      put_number(out, q);
    }
    for (double v : f.det) {
      out << ',';
      put_number(out, v);
    }
    out << '\n';
  }
}

void forecast_to_csv(std::span<const QuantileForecast> forecasts, const std::filesystem::path& path) {
  std::ostringstream os;
  write_forecast_csv(os, forecasts);
  write_file_atomic(path, os.str());
}

}  // namespace rupf
