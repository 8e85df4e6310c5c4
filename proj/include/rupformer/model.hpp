#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rupformer/embedding.hpp"
#include "rupformer/kpi_data.hpp"
#include "rupformer/rng.hpp"
#include "rupformer/tensor.hpp"

namespace rupf {

/// Architecture configuration. Defaults are the reference configuration:
/// 64-wide tokens, 2 encoder and 3 decoder layers of 8 heads, 256-wide
/// feed-forward, 4 input steps, 2 output steps, quantiles {0.1, 0.5, 0.9}.
struct Hyperparams {
  std::size_t d_emb = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 3;
  std::size_t heads = 8;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t input_len = 4;
  std::size_t output_len = 2;
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  std::size_t n_features = kNumFeatures;
  std::size_t n_det = kNumDeterministic;

  void validate() const;
  /// Position of the 0.5 quantile.
  std::size_t median_index() const { return 1; }
  std::size_t head_width() const { return n_det + quantiles.size(); }

  bool operator==(const Hyperparams&) const = default;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
};

struct FeedForwardParams {
  Linear inner;
  Linear outer;
};

struct NormParams {
  Tensor gain;
  Tensor bias;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  FeedForwardParams ff;
  NormParams norm1;
  NormParams norm2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  FeedForwardParams ff;
  NormParams norm1;
  NormParams norm2;
  NormParams norm3;
};

struct ModelParams {
  EmbeddingTables embed;
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Linear head;  // d_emb -> n_det + quantiles

  static ModelParams init(const Hyperparams& hp, Rng& rng);

  /// Visits every tensor in manifest order.
  template <typename F>
  void visit(F&& fn);
  template <typename F>
  void visit(F&& fn) const {
    const_cast<ModelParams*>(this)->visit([&](const std::string& name, Tensor& t) { fn(name, std::as_const(t)); });
  }

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t count() const;
  /// Deep copy; the copy's tensors share no storage with this one.
  ModelParams clone() const;
};

/// Closed-form parameter count.
std::size_t param_count(const Hyperparams& hp);

/// Raw head outputs: det is [rows, n_det] and quantiles is [rows, n_q], with
/// rows = batch * output_len.
struct DecoderOutput {
  Tensor det;
  Tensor quantiles;
};

/// Sorts each row of quantiles ascending and clips to [0, 1].
void postprocess_quantiles(DecoderOutput& out);

/// Model inputs for a batch of sequences stacked along rows.
struct BatchInputs {
  std::size_t batch = 0;
  Tensor encoder_features;  // [B*N, 9]
  std::vector<CalendarIndex> encoder_meta;
  std::vector<std::int32_t> encoder_pos;
  Tensor decoder_features;  // [B*M, 9]
  std::vector<CalendarIndex> decoder_meta;
  std::vector<std::int32_t> decoder_pos;
  Tensor targets;  // [B*M, 9]
};

/// Decoder continuous inputs under teacher forcing: zeros at step 0, the
/// ground truth of step k-1 at step k. Returned as M x 9 row-major.
std::vector<float> teacher_forcing_inputs(const TrainingSample& sample, std::size_t output_len);

BatchInputs make_batch(std::span<const TrainingSample* const> samples, const Hyperparams& hp);

/// Encoder-decoder transformer with a hybrid deterministic/quantile head.
class RupFormer {
 public:
  RupFormer(Hyperparams hp, ModelParams params);
  static RupFormer create(const Hyperparams& hp, std::uint64_t seed);

  const Hyperparams& hyperparams() const { return hp_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  /// tokens: [B*N, d_emb] -> memory [B*N, d_emb].
  Tensor encode(const Tensor& tokens, std::size_t batch, bool training, Rng& rng) const;
  /// decoder_tokens: [B*M, d_emb]; memory from encode.
  DecoderOutput decode(const Tensor& memory, const Tensor& decoder_tokens, std::size_t batch, bool training,
                       Rng& rng) const;

  /// Embedding + encode + decode on prepared inputs; raw head outputs.
  DecoderOutput forward(const BatchInputs& inputs, bool training, Rng& rng) const;
  /// Teacher-forced pass over one sample; raw head outputs.
  DecoderOutput forward_training(const TrainingSample& sample, bool training, Rng& rng) const;
  /// Inference on one window: zero decoder continuous inputs, no dropout,
  /// post-processed quantiles. window is N x 9 normalized.
  DecoderOutput forward_block(std::span<const float> window, std::span<const StepMeta> window_meta,
                              std::span<const StepMeta> future_meta) const;

 private:
  Hyperparams hp_;
  ModelParams params_;
};

template <typename F>
void ModelParams::visit(F&& fn) {
  auto linear = [&](const std::string& prefix, Linear& l) {
    fn(prefix + ".weight", l.weight);
    fn(prefix + ".bias", l.bias);
  };
  auto attention = [&](const std::string& prefix, AttentionParams& a) {
    linear(prefix + ".query", a.query);
    linear(prefix + ".key", a.key);
    linear(prefix + ".value", a.value);
    linear(prefix + ".output", a.output);
  };
  auto ff = [&](const std::string& prefix, FeedForwardParams& f) {
    linear(prefix + ".inner", f.inner);
    linear(prefix + ".outer", f.outer);
  };
  auto norm = [&](const std::string& prefix, NormParams& n) {
    fn(prefix + ".gain", n.gain);
    fn(prefix + ".bias", n.bias);
  };
  fn("embed.proj.weight", embed.proj_weight);
  fn("embed.proj.bias", embed.proj_bias);
  fn("embed.enc_pos", embed.enc_pos);
  fn("embed.dec_pos", embed.dec_pos);
  fn("embed.month", embed.month);
  fn("embed.weekday", embed.weekday);
  fn("embed.hour", embed.hour);
  fn("embed.minute", embed.minute);
  fn("embed.carrier", embed.carrier);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    attention(p + ".self_attn", encoder[i].self_attn);
    ff(p + ".ff", encoder[i].ff);
    norm(p + ".norm1", encoder[i].norm1);
    norm(p + ".norm2", encoder[i].norm2);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    attention(p + ".self_attn", decoder[i].self_attn);
    attention(p + ".cross_attn", decoder[i].cross_attn);
    ff(p + ".ff", decoder[i].ff);
    norm(p + ".norm1", decoder[i].norm1);
    norm(p + ".norm2", decoder[i].norm2);
    norm(p + ".norm3", decoder[i].norm3);
  }
  linear("head", head);
}

}  // namespace rupf
