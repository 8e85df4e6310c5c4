#include "rupformer/embedding.hpp"

#include <cmath>

#include "rupformer/errors.hpp"

namespace rupf {

namespace {

Tensor uniform_table(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor uniform_vector(std::size_t n, double bound, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from({n}, std::move(v), true);
}

}  // namespace

EmbeddingTables EmbeddingTables::init(std::size_t d_emb, std::size_t input_len, std::size_t output_len, Rng& rng) {
  const double table_bound = 1.0 / std::sqrt(static_cast<double>(d_emb));
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(kNumFeatures));
  EmbeddingTables t;
  t.proj_weight = uniform_table(kNumFeatures, d_emb, proj_bound, rng);
  t.proj_bias = uniform_vector(d_emb, proj_bound, rng);
  t.enc_pos = uniform_table(input_len, d_emb, table_bound, rng);
  t.dec_pos = uniform_table(output_len, d_emb, table_bound, rng);
  t.month = uniform_table(kMonths, d_emb, table_bound, rng);
  t.weekday = uniform_table(kWeekdays, d_emb, table_bound, rng);
  t.hour = uniform_table(kHours, d_emb, table_bound, rng);
  t.minute = uniform_table(kMinuteSlots, d_emb, table_bound, rng);
  t.carrier = uniform_table(kMaxCarriers, d_emb, table_bound, rng);
  return t;
}

Tensor embed_tokens(const EmbeddingTables& tables, const Tensor& features, std::span<const CalendarIndex> meta,
                    std::span<const std::int32_t> positions, Side side, float dropout_p, bool training, Rng& rng) {
  if (features.rank() != 2 || features.dim(1) != kNumFeatures) {
    throw DimensionError("embed_tokens: features must be [T, 9], got " + shape_str(features.shape()));
  }
  const std::size_t rows = features.dim(0);
  if (meta.size() != rows || positions.size() != rows) {
    throw DimensionError("embed_tokens: " + std::to_string(rows) + " feature rows but " +
                         std::to_string(meta.size()) + " metadata entries and " + std::to_string(positions.size()) +
                         " positions");
  }
  std::vector<std::int32_t> month(rows), weekday(rows), hour(rows), minute(rows), carrier(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    month[i] = meta[i].month;
    weekday[i] = meta[i].weekday;
    hour[i] = meta[i].hour;
    minute[i] = meta[i].minute_slot;
    carrier[i] = meta[i].carrier;
  }
  const Tensor& pos_table = side == Side::kEncoder ? tables.enc_pos : tables.dec_pos;

  Tensor x = add_bias(matmul(features, tables.proj_weight), tables.proj_bias);
  x = add(x, embedding_lookup(pos_table, positions));
  x = add(x, embedding_lookup(tables.month, month));
  x = add(x, embedding_lookup(tables.weekday, weekday));
  x = add(x, embedding_lookup(tables.hour, hour));
  x = add(x, embedding_lookup(tables.minute, minute));
  x = add(x, embedding_lookup(tables.carrier, carrier));
  return dropout(x, dropout_p, training, rng);
}

}  // namespace rupf
