#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rupformer/kpi_data.hpp"
#include "rupformer/rng.hpp"
#include "rupformer/tensor.hpp"

namespace rupf {

enum class Side { kEncoder, kDecoder };

inline constexpr std::size_t kMonths = 12;
inline constexpr std::size_t kWeekdays = 7;
inline constexpr std::size_t kHours = 24;
inline constexpr std::size_t kMinuteSlots = 4;

/// Learnable token construction: a shared 9 -> d_emb projection plus
/// side-specific positional tables and calendar/carrier lookup tables.
struct EmbeddingTables {
  Tensor proj_weight;  // [9, d_emb]
  Tensor proj_bias;    // [d_emb]
  Tensor enc_pos;      // [N, d_emb]
  Tensor dec_pos;      // [M, d_emb]
  Tensor month;        // [12, d_emb]
  Tensor weekday;      // [7, d_emb]
  Tensor hour;         // [24, d_emb]
  Tensor minute;       // [4, d_emb]
  Tensor carrier;      // [21, d_emb]

  static EmbeddingTables init(std::size_t d_emb, std::size_t input_len, std::size_t output_len, Rng& rng);
};

/// Sum of projected features and the embedding rows selected by `meta` and
/// `positions`, followed by dropout when training. `features` is [T, 9] where
/// T may cover several sequences stacked along the rows.
Tensor embed_tokens(const EmbeddingTables& tables, const Tensor& features, std::span<const CalendarIndex> meta,
                    std::span<const std::int32_t> positions, Side side, float dropout_p, bool training, Rng& rng);

}  // namespace rupf
