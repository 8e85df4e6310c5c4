#include "rupformer/synth_traffic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rupformer/errors.hpp"
#include "rupformer/rng.hpp"

namespace rupf {

namespace {

constexpr double kUsersPerLoad = 40.0;
constexpr double kMbpsPerPrb = 0.7;
constexpr double kTtisPerInterval = 900000.0;  // 1 ms TTIs in 15 minutes

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void CarrierProfile::validate() const {
  const std::string who = "carrier profile " + std::to_string(carrier_id) + ": ";
  if (carrier_id < 0 || carrier_id >= kMaxCarriers) throw DomainError(who + "carrier_id outside 0..20");
  if (n_prb_total <= 0) throw DomainError(who + "n_prb_total must be positive");
  if (!in_unit(base_load)) throw DomainError(who + "base load outside [0, 1]");
  if (!(diurnal_amplitude >= 0.0 && diurnal_amplitude <= 0.5)) throw DomainError(who + "amplitude outside [0, 0.5]");
  if (base_load + diurnal_amplitude > 1.0 + 1e-12) throw DomainError(who + "base load + amplitude exceeds 1");
  if (!in_unit(weekend_attenuation)) throw DomainError(who + "weekend attenuation outside [0, 1]");
  if (!in_unit(burst_probability)) throw DomainError(who + "burst probability outside [0, 1]");
  if (!in_unit(burst_depth)) throw DomainError(who + "burst depth outside [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(phase_hours)) throw DomainError(who + "invalid noise or phase");
}

std::vector<CarrierProfile> default_profiles(int n_carriers, std::uint64_t seed) {
  if (n_carriers < 1 || n_carriers > kMaxCarriers) {
    throw DomainError("default_profiles: n_carriers must lie in 1..21, got " + std::to_string(n_carriers));
  }
  static constexpr int kBandwidthPrbs[3] = {50, 75, 100};
  Rng rng(seed);
  std::vector<CarrierProfile> out;
  for (int c = 0; c < n_carriers; ++c) {
    const int sector = c / 7;
    CarrierProfile p;
    p.carrier_id = c;
    p.n_prb_total = kBandwidthPrbs[c % 3];
    p.base_load = rng.uniform(0.25, 0.45);
    p.diurnal_amplitude = std::min({rng.uniform(0.2, 0.35), 0.5, 1.0 - p.base_load});
    p.phase_hours = 6.0 + 2.0 * sector + rng.uniform(-1.0, 1.0);
    p.weekend_attenuation = rng.uniform(0.1, 0.4);
    p.burst_probability = rng.uniform(0.003, 0.01);
    p.burst_depth = rng.uniform(0.1, 0.25);
    p.noise_sigma = rng.uniform(0.03, 0.05);
    out.push_back(p);
  }
  return out;
}

std::vector<KpiSeries> generate(std::span<const CarrierProfile> profiles, Timestamp start, int n_days,
                                std::uint64_t seed) {
  if (n_days < 1) throw DomainError("generate: n_days must be at least 1");
  if (start.time_since_epoch().count() % (15 * 60) != 0) {
    throw DomainError("generate: start " + format_timestamp(start) + " is not on the 15-minute grid");
  }
  for (const auto& p : profiles) p.validate();

  const std::size_t steps = static_cast<std::size_t>(n_days) * kStepsPerDay;
  const double burst_stop = 1.0 / kMeanBurstSteps;
  std::vector<KpiSeries> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) {
    Rng rng(seed ^ static_cast<std::uint64_t>(p.carrier_id));
    KpiSeries series{p.carrier_id, {}};
    series.records.reserve(steps);
    const auto total = static_cast<double>(p.n_prb_total);
    std::int64_t burst_left = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      const Timestamp ts = start + kStep * static_cast<std::int64_t>(t);
      const CalendarIndex cal = calendar_indices(ts, p.carrier_id);
      const double hour = cal.hour + 15.0 * cal.minute_slot / 60.0;
      const double weekday_factor = cal.weekday >= 5 ? 1.0 - p.weekend_attenuation : 1.0;

      const double eps = p.noise_sigma * rng.normal();
      if (burst_left == 0 && rng.bernoulli(p.burst_probability)) {
        // Geometric on {1, 2, ...} with mean kMeanBurstSteps.
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        burst_left = 1 + static_cast<std::int64_t>(std::floor(std::log(u) / std::log1p(-burst_stop)));
      }
      double load = p.base_load +
                    p.diurnal_amplitude * std::sin(2.0 * std::numbers::pi * (hour - p.phase_hours) / 24.0) *
                        weekday_factor +
                    eps;
      if (burst_left > 0) {
        load += p.burst_depth;
        --burst_left;
      }
      load = std::clamp(load, 0.0, 1.0);

      const double used = std::round(load * total);
      const double utilization = used / total;
      KpiRecord r;
      r.timestamp = ts;
      r.carrier_id = p.carrier_id;
      r.prb_total = total;
      r.residual_prb = residual_ratio(total, used);
      r.prb_mean = std::max(0.0, used * (0.92 + 0.02 * rng.normal()));
      r.active_tti = std::round(kTtisPerInterval * std::clamp(utilization * (1.1 + 0.03 * rng.normal()), 0.0, 1.0));
      r.prb_pdsch = std::max(0.0, used * (0.85 + 0.02 * rng.normal()));
      r.prb_pucch = std::max(0.0, used * (0.06 + 0.005 * rng.normal()));
      r.ue_avg = std::max(0.0, kUsersPerLoad * load * (1.0 + 0.1 * rng.normal()));
      r.ue_max = std::ceil(1.5 * r.ue_avg);
      r.dl_tput = kMbpsPerPrb * used;
      series.records.push_back(r);
    }
    out.push_back(std::move(series));
  }
  return out;
}

}  // namespace rupf
