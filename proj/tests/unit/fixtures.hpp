#pragma once

#include <cmath>

#include "rupformer/kpi_data.hpp"

namespace fixtures {

/// Plausible record whose values are a smooth function of the step index.
inline rupf::KpiRecord record_at(int carrier, rupf::Timestamp t, std::size_t step) {
  const double load = 0.5 + 0.4 * std::sin(0.3 * static_cast<double>(step) + carrier);
  rupf::KpiRecord r;
  r.timestamp = t;
  r.carrier_id = carrier;
  r.prb_total = 100;
  r.prb_mean = 100 * load * 0.9;
  r.active_tti = 900000 * load;
  r.prb_pdsch = 100 * load * 0.85;
  r.prb_pucch = 100 * load * 0.06;
  r.ue_avg = 40 * load;
  r.ue_max = std::ceil(1.5 * r.ue_avg);
  r.dl_tput = 70 * load;
  r.residual_prb = 1.0 - load;
  return r;
}

inline rupf::KpiSeries series(int carrier, std::size_t n, rupf::Timestamp start = rupf::parse_timestamp("2024-03-04T00:00:00Z")) {
  rupf::KpiSeries s{carrier, {}};
  for (std::size_t i = 0; i < n; ++i) s.records.push_back(record_at(carrier, start + rupf::kStep * static_cast<int>(i), i));
  return s;
}

}  // namespace fixtures
