#include "rupformer/kpi_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"

namespace rupf {

namespace {

constexpr std::string_view kCsvHeader =
    "timestamp,carrier_id,prb_mean,prb_total,active_tti,prb_pdsch,prb_pucch,ue_max,ue_avg,dl_tput,residual_prb";

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

FeatureVector KpiRecord::features() const {
  return {prb_mean, prb_total, active_tti, prb_pdsch, prb_pucch, ue_max, ue_avg, dl_tput, residual_prb};
}

double residual_ratio(double n_total, double n_used) {
  if (!(n_total > 0.0)) throw DomainError("residual_ratio: total PRB count must be positive");
  if (n_used < 0.0 || n_used > n_total) {
    throw DomainError("residual_ratio: used PRBs " + fmt_double(n_used) + " outside [0, " + fmt_double(n_total) + "]");
  }
  return (n_total - n_used) / n_total;
}

CalendarIndex calendar_indices(Timestamp timestamp, int carrier_id) {
  using namespace std::chrono;
  const auto day = floor<days>(timestamp);
  const year_month_day ymd{day};
  const hh_mm_ss tod{timestamp - day};
  const auto minute = static_cast<int>(tod.minutes().count());
  if (minute % 15 != 0 || tod.seconds().count() != 0) {
    throw DomainError("calendar_indices: " + format_timestamp(timestamp) + " is not on the 15-minute grid");
  }
  if (carrier_id < 0 || carrier_id >= kMaxCarriers) {
    throw DomainError("calendar_indices: carrier_id " + std::to_string(carrier_id) + " outside 0..20");
  }
  CalendarIndex idx;
  idx.month = static_cast<std::int32_t>(static_cast<unsigned>(ymd.month())) - 1;
  idx.weekday = static_cast<std::int32_t>(weekday{day}.iso_encoding()) - 1;
  idx.hour = static_cast<std::int32_t>(tod.hours().count());
  idx.minute_slot = minute / 15;
  idx.carrier = carrier_id;
  return idx;
}

StepMeta step_meta(Timestamp timestamp, int carrier_id) { return {timestamp, calendar_indices(timestamp, carrier_id)}; }

Timestamp parse_timestamp(std::string_view text) {
  int y = 0;
  unsigned mo = 0;
  unsigned d = 0;
  unsigned h = 0;
  unsigned mi = 0;
  unsigned s = 0;
  const std::string owned(text);
  char tail = 0;
  if (owned.size() != 20 ||
      std::sscanf(owned.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%c", &y, &mo, &d, &h, &mi, &s, &tail) != 7 || tail != 'Z') {
    throw IngestionError("malformed timestamp '" + owned + "' (expected YYYY-MM-DDTHH:MM:SSZ)");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw IngestionError("malformed timestamp '" + owned + "'");
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

std::string format_timestamp(Timestamp timestamp) {
  using namespace std::chrono;
  const auto day = floor<days>(timestamp);
  const year_month_day ymd{day};
  const hh_mm_ss tod{timestamp - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                static_cast<int>(tod.seconds().count()));
  return buf;
}

void validate_record(const KpiRecord& r) {
  const std::string where = "carrier " + std::to_string(r.carrier_id) + " at " + format_timestamp(r.timestamp);
  if (r.carrier_id < 0 || r.carrier_id >= kMaxCarriers) {
    throw IngestionError("carrier_id " + std::to_string(r.carrier_id) + " outside 0..20");
  }
  const auto secs = r.timestamp.time_since_epoch().count();
  if (secs % (15 * 60) != 0) throw IngestionError(where + ": timestamp not aligned to the 15-minute grid");
  if (!(r.residual_prb >= 0.0 && r.residual_prb <= 1.0)) {
    throw IngestionError(where + ": residual_prb " + fmt_double(r.residual_prb) + " outside [0, 1]");
  }
  const FeatureVector f = r.features();
  for (std::size_t i = 0; i < kNumDeterministic; ++i) {
    if (!(f[i] >= 0.0) || !std::isfinite(f[i])) {
      throw IngestionError(where + ": " + std::string(kFeatureNames[i]) + " must be a nonnegative number");
    }
  }
  if (r.ue_avg > r.ue_max) throw IngestionError(where + ": ue_avg exceeds ue_max");
}

void validate_series(const KpiSeries& series) {
  for (std::size_t i = 0; i < series.records.size(); ++i) {
    const auto& r = series.records[i];
    validate_record(r);
    if (r.carrier_id != series.carrier_id) {
      throw IngestionError("series for carrier " + std::to_string(series.carrier_id) + " holds a record of carrier " +
                           std::to_string(r.carrier_id));
    }
    if (i == 0) continue;
    const auto prev = series.records[i - 1].timestamp;
    if (r.timestamp == prev) {
      throw IngestionError("duplicate timestamp " + format_timestamp(r.timestamp) + " for carrier " +
                           std::to_string(series.carrier_id));
    }
    if (r.timestamp != prev + kStep) {
      throw IngestionError("grid gap for carrier " + std::to_string(series.carrier_id) + " between " +
                           format_timestamp(prev) + " and " + format_timestamp(r.timestamp));
    }
  }
}

std::vector<KpiSeries> parse_csv(std::istream& in, std::string_view source_name) {
  const std::string src(source_name);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(src + ": empty file, header required");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw IngestionError(src + ": unexpected header '" + line + "'");

  std::map<int, KpiSeries> by_carrier;
  std::size_t line_no = 1;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string at = src + ":" + std::to_string(line_no) + ": ";
    fields.clear();
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 11) {
      throw IngestionError(at + "expected 11 fields, got " + std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw IngestionError(at + "missing field");
    }
    KpiRecord r;
    try {
      r.timestamp = parse_timestamp(fields[0]);
    } catch (const IngestionError& e) {
      throw IngestionError(at + e.what());
    }
    if (!parse_number(fields[1], r.carrier_id)) throw IngestionError(at + "malformed carrier_id");
    double* targets[] = {&r.prb_mean,  &r.prb_total, &r.active_tti, &r.prb_pdsch,   &r.prb_pucch,
                         &r.ue_max,    &r.ue_avg,    &r.dl_tput,    &r.residual_prb};
    for (std::size_t i = 0; i < 9; ++i) {
      if (!parse_number(fields[i + 2], *targets[i])) {
        throw IngestionError(at + "malformed value for " + std::string(kFeatureNames[i]));
      }
    }
    try {
      validate_record(r);
    } catch (const IngestionError& e) {
      throw IngestionError(at + e.what());
    }
    auto& s = by_carrier[r.carrier_id];
    s.carrier_id = r.carrier_id;
    s.records.push_back(r);
  }

  std::vector<KpiSeries> out;
  out.reserve(by_carrier.size());
  for (auto& [id, s] : by_carrier) {
    std::stable_sort(s.records.begin(), s.records.end(),
                     [](const KpiRecord& a, const KpiRecord& b) { return a.timestamp < b.timestamp; });
    try {
      validate_series(s);
    } catch (const IngestionError& e) {
      throw IngestionError(src + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<KpiSeries> load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(std::ostream& out, std::span<const KpiSeries> series) {
  out << kCsvHeader << '\n';
  for (const auto& s : series) {
    for (const auto& r : s.records) {
      out << format_timestamp(r.timestamp) << ',' << r.carrier_id;
      for (double v : r.features()) out << ',' << fmt_double(v);
      out << '\n';
    }
  }
}

void save_csv(const std::filesystem::path& path, std::span<const KpiSeries> series) {
  std::ostringstream os;
  write_csv(os, series);
  write_file_atomic(path, os.str());
}

SplitSpec SplitSpec::by_fractions(double train, double val, double test) {
  SplitSpec s;
  s.fractions = std::array<double, 3>{train, val, test};
  return s;
}

SplitSpec SplitSpec::by_days(double train, double val, double test) {
  SplitSpec s;
  s.days = std::array<double, 3>{train, val, test};
  return s;
}

DataSplit chronological_split(std::span<const KpiSeries> series, const SplitSpec& spec,
                              std::size_t min_part_length) {
  if (series.empty()) throw IngestionError("chronological_split: no series");
  if (spec.fractions.has_value() == spec.days.has_value()) {
    throw ConfigError("chronological_split: give exactly one of fractions or days");
  }
  Timestamp start = Timestamp::max();
  Timestamp end = Timestamp::min();
  for (const auto& s : series) {
    if (s.records.empty()) throw IngestionError("chronological_split: carrier " + std::to_string(s.carrier_id) + " is empty");
    start = std::min(start, s.records.front().timestamp);
    end = std::max(end, s.records.back().timestamp + kStep);
  }
  const auto total_steps = (end - start) / kStep;
  std::array<std::int64_t, 3> steps{};
  if (spec.fractions) {
    const auto& f = *spec.fractions;
    for (double v : f) {
      if (!(v > 0.0)) throw ConfigError("chronological_split: fractions must be positive");
    }
    if (f[0] + f[1] + f[2] > 1.0 + 1e-9) throw ConfigError("chronological_split: fractions sum above 1");
    steps[0] = std::llround(static_cast<double>(total_steps) * f[0]);
    steps[1] = std::llround(static_cast<double>(total_steps) * f[1]);
    steps[2] = std::min<std::int64_t>(std::llround(static_cast<double>(total_steps) * f[2]),
                                      total_steps - steps[0] - steps[1]);
  } else {
    for (std::size_t i = 0; i < 3; ++i) {
      const double d = (*spec.days)[i];
      if (!(d > 0.0)) throw ConfigError("chronological_split: day counts must be positive");
      steps[i] = std::llround(d * static_cast<double>(kStepsPerDay));
    }
  }
  DataSplit out;
  out.val_start = start + kStep * steps[0];
  out.test_start = out.val_start + kStep * steps[1];
  out.test_end = out.test_start + kStep * steps[2];
  if (out.test_end > end) {
    throw IngestionError("chronological_split: data spans " + std::to_string(total_steps) +
                         " steps, split needs " + std::to_string(steps[0] + steps[1] + steps[2]));
  }
  const Timestamp cuts[4] = {start, out.val_start, out.test_start, out.test_end};
  std::vector<KpiSeries>* parts[3] = {&out.train, &out.val, &out.test};
  static constexpr const char* kNames[3] = {"train", "validation", "test"};
  for (const auto& s : series) {
    for (std::size_t p = 0; p < 3; ++p) {
      KpiSeries part{s.carrier_id, {}};
      for (const auto& r : s.records) {
        if (r.timestamp >= cuts[p] && r.timestamp < cuts[p + 1]) part.records.push_back(r);
      }
      if (part.records.size() < min_part_length) {
        throw IngestionError("chronological_split: " + std::string(kNames[p]) + " part of carrier " +
                             std::to_string(s.carrier_id) + " has " + std::to_string(part.records.size()) +
                             " steps, needs at least " + std::to_string(min_part_length));
      }
      parts[p]->push_back(std::move(part));
    }
  }
  return out;
}

Normalizer::Normalizer(std::array<double, kNumDeterministic> min, std::array<double, kNumDeterministic> max)
    : min_(min), max_(max) {
  for (std::size_t i = 0; i < kNumDeterministic; ++i) {
    if (max_[i] < min_[i]) throw DomainError("normalizer: max below min for " + std::string(kFeatureNames[i]));
  }
}

Normalizer Normalizer::fit(std::span<const KpiSeries> train) {
  Normalizer n;
  n.min_.fill(std::numeric_limits<double>::infinity());
  n.max_.fill(-std::numeric_limits<double>::infinity());
  std::size_t count = 0;
  for (const auto& s : train) {
    for (const auto& r : s.records) {
      const auto f = r.features();
      for (std::size_t i = 0; i < kNumDeterministic; ++i) {
        n.min_[i] = std::min(n.min_[i], f[i]);
        n.max_[i] = std::max(n.max_[i], f[i]);
      }
      ++count;
    }
  }
  if (count == 0) throw IngestionError("normalizer: training split is empty");
  for (std::size_t i = 0; i < kNumDeterministic; ++i) {
    if (n.max_[i] == n.min_[i]) {
      n.warnings_.push_back("feature " + std::string(kFeatureNames[i]) + " is constant (" + fmt_double(n.min_[i]) +
                            ") in the training split; mapped to 0");
    }
  }
  return n;
}

double Normalizer::apply_feature(std::size_t feature, double value) const {
  if (feature == kResidualIndex) return value;
  const double span = max_.at(feature) - min_[feature];
  if (span <= 0.0) return 0.0;
  return std::clamp((value - min_[feature]) / span, 0.0, 1.0);
}

double Normalizer::invert_feature(std::size_t feature, double value) const {
  if (feature == kResidualIndex) return value;
  return min_.at(feature) + value * (max_[feature] - min_[feature]);
}

FeatureVector Normalizer::apply(const FeatureVector& raw) const {
  FeatureVector out{};
  for (std::size_t i = 0; i < kNumFeatures; ++i) out[i] = apply_feature(i, raw[i]);
  return out;
}

FeatureVector Normalizer::invert(const FeatureVector& scaled) const {
  FeatureVector out{};
  for (std::size_t i = 0; i < kNumFeatures; ++i) out[i] = invert_feature(i, scaled[i]);
  return out;
}

std::array<float, kNumFeatures> normalized_features(const KpiRecord& record, const Normalizer& normalizer) {
  const auto scaled = normalizer.apply(record.features());
  std::array<float, kNumFeatures> out{};
  for (std::size_t i = 0; i < kNumFeatures; ++i) out[i] = static_cast<float>(scaled[i]);
  return out;
}

std::vector<TrainingSample> make_samples(std::span<const KpiSeries> series, const Normalizer& normalizer,
                                         std::size_t input_len, std::size_t output_len, std::size_t stride) {
  if (input_len == 0 || output_len == 0 || stride == 0) {
    throw DomainError("make_samples: window lengths and stride must be positive");
  }
  const std::size_t window = input_len + output_len;
  std::size_t max_anchors = 0;
  for (const auto& s : series) {
    if (s.records.size() < window) {
      throw IngestionError("make_samples: carrier " + std::to_string(s.carrier_id) + " has " +
                           std::to_string(s.records.size()) + " steps, window needs " + std::to_string(window));
    }
    max_anchors = std::max(max_anchors, (s.records.size() - window) / stride + 1);
  }
  std::vector<TrainingSample> out;
  for (std::size_t a = 0; a < max_anchors; ++a) {
    for (const auto& s : series) {
      const std::size_t begin = a * stride;
      if (begin + window > s.records.size()) continue;
      TrainingSample sample;
      sample.carrier_id = s.carrier_id;
      sample.encoder_inputs.reserve(input_len * kNumFeatures);
      sample.decoder_targets.reserve(output_len * kNumFeatures);
      for (std::size_t t = 0; t < window; ++t) {
        const auto& r = s.records[begin + t];
        const auto f = normalized_features(r, normalizer);
        auto& dst = t < input_len ? sample.encoder_inputs : sample.decoder_targets;
        dst.insert(dst.end(), f.begin(), f.end());
        (t < input_len ? sample.encoder_meta : sample.decoder_meta).push_back(step_meta(r.timestamp, r.carrier_id));
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

}  // namespace rupf
