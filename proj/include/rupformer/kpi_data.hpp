#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rupf {

inline constexpr std::size_t kNumFeatures = 9;
inline constexpr std::size_t kNumDeterministic = 8;
inline constexpr std::size_t kResidualIndex = 8;
inline constexpr int kMaxCarriers = 21;
inline constexpr std::chrono::minutes kStep{15};
inline constexpr std::size_t kStepsPerDay = 96;

using Timestamp = std::chrono::sys_seconds;

/// Column names of the KPI vector, in feature order.
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "prb_mean", "prb_total", "active_tti", "prb_pdsch", "prb_pucch", "ue_max", "ue_avg", "dl_tput", "residual_prb"};

using FeatureVector = std::array<double, kNumFeatures>;

/// One carrier's KPI vector for one 15-minute interval.
struct KpiRecord {
  Timestamp timestamp{};
  int carrier_id = 0;
  double prb_mean = 0.0;
  double prb_total = 0.0;
  double active_tti = 0.0;
  double prb_pdsch = 0.0;
  double prb_pucch = 0.0;
  double ue_max = 0.0;
  double ue_avg = 0.0;
  double dl_tput = 0.0;
  double residual_prb = 0.0;

  FeatureVector features() const;
  bool operator==(const KpiRecord&) const = default;
};

struct KpiSeries {
  int carrier_id = 0;
  std::vector<KpiRecord> records;

  bool operator==(const KpiSeries&) const = default;
};

/// Categorical indices consumed by the embedding tables.
struct CalendarIndex {
  std::int32_t month = 0;        // 0..11
  std::int32_t weekday = 0;      // 0..6, Monday = 0
  std::int32_t hour = 0;         // 0..23
  std::int32_t minute_slot = 0;  // 0..3
  std::int32_t carrier = 0;      // 0..20

  bool operator==(const CalendarIndex&) const = default;
};

struct StepMeta {
  Timestamp time{};
  CalendarIndex index;

  bool operator==(const StepMeta&) const = default;
};

/// (n_total - n_used) / n_total.
double residual_ratio(double n_total, double n_used);

CalendarIndex calendar_indices(Timestamp timestamp, int carrier_id);
StepMeta step_meta(Timestamp timestamp, int carrier_id);

/// Parses `2024-03-04T10:45:00Z`.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp timestamp);

/// Validates record ranges (carrier id, residual, ue ordering, grid minute).
void validate_record(const KpiRecord& record);
/// Validates a series: record invariants plus a gap-free 15-minute grid.
void validate_series(const KpiSeries& series);

std::vector<KpiSeries> parse_csv(std::istream& in, std::string_view source_name = "<stream>");
std::vector<KpiSeries> load_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, std::span<const KpiSeries> series);
/// Atomic write (temp file + rename). Rows ordered by carrier, then time.
void save_csv(const std::filesystem::path& path, std::span<const KpiSeries> series);

/// Either fractions of the common span or absolute day counts.
struct SplitSpec {
  std::optional<std::array<double, 3>> fractions;
  std::optional<std::array<double, 3>> days;

  static SplitSpec by_fractions(double train, double val, double test);
  static SplitSpec by_days(double train, double val, double test);
};

struct DataSplit {
  std::vector<KpiSeries> train;
  std::vector<KpiSeries> val;
  std::vector<KpiSeries> test;
  Timestamp val_start{};
  Timestamp test_start{};
  Timestamp test_end{};
};

/// Cuts every carrier at the same instants. Each part must hold at least
/// `min_part_length` records per carrier.
DataSplit chronological_split(std::span<const KpiSeries> series, const SplitSpec& spec,
                              std::size_t min_part_length);

/// Min-max scaling of the eight non-residual features, fit on training data.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::array<double, kNumDeterministic> min, std::array<double, kNumDeterministic> max);

  static Normalizer fit(std::span<const KpiSeries> train);

  double apply_feature(std::size_t feature, double value) const;
  double invert_feature(std::size_t feature, double value) const;
  FeatureVector apply(const FeatureVector& raw) const;
  FeatureVector invert(const FeatureVector& scaled) const;

  const std::array<double, kNumDeterministic>& min() const { return min_; }
  const std::array<double, kNumDeterministic>& max() const { return max_; }
  /// Constant training features; these map to 0.
  const std::vector<std::string>& warnings() const { return warnings_; }

  bool operator==(const Normalizer& other) const { return min_ == other.min_ && max_ == other.max_; }

 private:
  std::array<double, kNumDeterministic> min_{};
  std::array<double, kNumDeterministic> max_{};
  std::vector<std::string> warnings_;
};

struct TrainingSample {
  int carrier_id = 0;
  std::vector<float> encoder_inputs;   // N x 9, normalized
  std::vector<StepMeta> encoder_meta;  // N
  std::vector<float> decoder_targets;  // M x 9, normalized
  std::vector<StepMeta> decoder_meta;  // M
};

/// Sliding windows over each series. Samples are ordered anchor-major with
/// carriers interleaved (carrier ascending within an anchor).
std::vector<TrainingSample> make_samples(std::span<const KpiSeries> series, const Normalizer& normalizer,
                                         std::size_t input_len, std::size_t output_len, std::size_t stride = 1);

/// Normalized feature vector of one record, as float.
std::array<float, kNumFeatures> normalized_features(const KpiRecord& record, const Normalizer& normalizer);

}  // namespace rupf
