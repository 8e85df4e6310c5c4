#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rupformer/kpi_data.hpp"

namespace rupf {

/// Load model of one carrier. Load at hour h is
/// b + a*sin(2*pi*(h - phase)/24) * weekday_factor + noise, plus burst depth
/// while a burst is active, clipped to [0, 1].
struct CarrierProfile {
  int carrier_id = 0;
  int n_prb_total = 100;
  double base_load = 0.4;
  double diurnal_amplitude = 0.3;
  double phase_hours = 8.0;
  double weekend_attenuation = 0.3;  // weekend factor is 1 - attenuation
  double burst_probability = 0.005;
  double burst_depth = 0.2;
  double noise_sigma = 0.02;

  void validate() const;
};

inline constexpr double kMeanBurstSteps = 8.0;

std::vector<CarrierProfile> default_profiles(int n_carriers = kMaxCarriers, std::uint64_t seed = 0);

/// Deterministic in (profiles, start, n_days, seed). Carrier c draws from a
/// generator seeded with seed ^ c.
std::vector<KpiSeries> generate(std::span<const CarrierProfile> profiles, Timestamp start, int n_days,
                                std::uint64_t seed);

}  // namespace rupf
