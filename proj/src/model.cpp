#include "rupformer/model.hpp"

#include <algorithm>
#include <cmath>

#include "rupformer/errors.hpp"

namespace rupf {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = uniform({in, out}, bound, rng);
  l.bias = uniform({out}, bound, rng);
  return l;
}

AttentionParams init_attention(std::size_t d, Rng& rng) {
  AttentionParams a;
  a.query = init_linear(d, d, rng);
  a.key = init_linear(d, d, rng);
  a.value = init_linear(d, d, rng);
  a.output = init_linear(d, d, rng);
  return a;
}

FeedForwardParams init_ff(std::size_t d, std::size_t d_ff, Rng& rng) {
  return {init_linear(d, d_ff, rng), init_linear(d_ff, d, rng)};
}

NormParams init_norm(std::size_t d) { return {Tensor::full({d}, 1.0F, true), Tensor::zeros({d}, true)}; }

Tensor linear(const Tensor& x, const Linear& l) { return add_bias(matmul(x, l.weight), l.bias); }

// Multi-head attention of [B*Tq, d] queries over [B*Tk, d] keys/values.
Tensor attention(const AttentionParams& p, const Tensor& query_in, const Tensor& kv_in, std::size_t batch,
                 std::size_t tq, std::size_t tk, std::size_t heads, std::span<const float> mask) {
  const std::size_t d = query_in.dim(1);
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor& x, std::size_t t) {
    Tensor y = reshape(x, {batch, t, heads, dh});
    y = permute(y, {0, 2, 1, 3});
    return reshape(y, {batch * heads, t, dh});
  };
  const Tensor q = split(linear(query_in, p.query), tq);
  const Tensor k = split(linear(kv_in, p.key), tk);
  const Tensor v = split(linear(kv_in, p.value), tk);
  const Tensor scores = scale(matmul(q, transpose_last(k)), static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh))));
  const Tensor weights = softmax_lastdim(scores, mask);
  Tensor ctx = matmul(weights, v);
  ctx = reshape(ctx, {batch, heads, tq, dh});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {batch * tq, d});
  return linear(ctx, p.output);
}

Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) { return linear(relu(linear(x, p.inner)), p.outer); }

Tensor add_norm(const Tensor& x, const Tensor& sublayer, const NormParams& norm, float p, bool training, Rng& rng) {
  return layer_norm(add(x, dropout(sublayer, p, training, rng)), norm.gain, norm.bias);
}

void check_grid(std::span<const StepMeta> steps, const char* what) {
  for (std::size_t i = 1; i < steps.size(); ++i) {
    if (steps[i].time != steps[i - 1].time + kStep || steps[i].index.carrier != steps[0].index.carrier) {
      throw DomainError(std::string(what) + ": metadata is not a contiguous single-carrier 15-minute grid at step " +
                        std::to_string(i));
    }
  }
}

}  // namespace

void Hyperparams::validate() const {
  if (d_emb == 0 || heads == 0 || d_emb % heads != 0) {
    throw ConfigError("hyperparams: d_emb (" + std::to_string(d_emb) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (encoder_layers == 0 || decoder_layers == 0 || d_ff == 0) throw ConfigError("hyperparams: layer sizes must be positive");
  if (input_len == 0 || output_len == 0) throw ConfigError("hyperparams: window lengths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("hyperparams: dropout must lie in [0, 1)");
  if (n_features != kNumFeatures || n_det != n_features - 1) {
    throw ConfigError("hyperparams: n_features must be 9 and n_det must be n_features - 1");
  }
  if (quantiles.size() != 3 || quantiles[1] != 0.5) {
    throw ConfigError("hyperparams: exactly three quantiles with median 0.5 in the middle are supported");
  }
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) throw ConfigError("hyperparams: quantiles must lie in (0, 1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw ConfigError("hyperparams: quantiles must be increasing");
  }
}

ModelParams ModelParams::init(const Hyperparams& hp, Rng& rng) {
  hp.validate();
  ModelParams m;
  m.embed = EmbeddingTables::init(hp.d_emb, hp.input_len, hp.output_len, rng);
  for (std::size_t i = 0; i < hp.encoder_layers; ++i) {
    EncoderLayerParams layer;
    layer.self_attn = init_attention(hp.d_emb, rng);
    layer.ff = init_ff(hp.d_emb, hp.d_ff, rng);
    layer.norm1 = init_norm(hp.d_emb);
    layer.norm2 = init_norm(hp.d_emb);
    m.encoder.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < hp.decoder_layers; ++i) {
    DecoderLayerParams layer;
    layer.self_attn = init_attention(hp.d_emb, rng);
    layer.cross_attn = init_attention(hp.d_emb, rng);
    layer.ff = init_ff(hp.d_emb, hp.d_ff, rng);
    layer.norm1 = init_norm(hp.d_emb);
    layer.norm2 = init_norm(hp.d_emb);
    layer.norm3 = init_norm(hp.d_emb);
    m.decoder.push_back(std::move(layer));
  }
  m.head = init_linear(hp.d_emb, hp.head_width(), rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit([&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  copy.visit([](const std::string&, Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<float>(t.data().begin(), t.data().end()), true);
  });
  return copy;
}

std::size_t param_count(const Hyperparams& hp) {
  const std::size_t d = hp.d_emb;
  const std::size_t tables = hp.input_len + hp.output_len + kMonths + kWeekdays + kHours + kMinuteSlots + kMaxCarriers;
  const std::size_t embed = hp.n_features * d + d + tables * d;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ff = d * hp.d_ff + hp.d_ff + hp.d_ff * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t head = d * hp.head_width() + hp.head_width();
  return embed + hp.encoder_layers * (attn + ff + 2 * norm) + hp.decoder_layers * (2 * attn + ff + 3 * norm) + head;
}

void postprocess_quantiles(DecoderOutput& out) {
  const std::size_t cols = out.quantiles.shape().back();
  std::vector<float> q(out.quantiles.data().begin(), out.quantiles.data().end());
  for (std::size_t r = 0; r < q.size() / cols; ++r) {
    auto row = std::span(q).subspan(r * cols, cols);
    std::sort(row.begin(), row.end());
    for (auto& v : row) v = std::clamp(v, 0.0F, 1.0F);
  }
  out.quantiles = Tensor::from(out.quantiles.shape(), std::move(q));
}

std::vector<float> teacher_forcing_inputs(const TrainingSample& sample, std::size_t output_len) {
  if (sample.decoder_targets.size() != output_len * kNumFeatures) {
    throw DimensionError("teacher_forcing_inputs: sample holds " + std::to_string(sample.decoder_targets.size()) +
                         " target values, expected " + std::to_string(output_len * kNumFeatures));
  }
  std::vector<float> in(output_len * kNumFeatures, 0.0F);
  std::copy(sample.decoder_targets.begin(),
            sample.decoder_targets.end() - static_cast<std::ptrdiff_t>(kNumFeatures),
            in.begin() + static_cast<std::ptrdiff_t>(kNumFeatures));
  return in;
}

BatchInputs make_batch(std::span<const TrainingSample* const> samples, const Hyperparams& hp) {
  const std::size_t n = hp.input_len;
  const std::size_t m = hp.output_len;
  BatchInputs b;
  b.batch = samples.size();
  std::vector<float> enc;
  std::vector<float> dec;
  std::vector<float> tgt;
  enc.reserve(b.batch * n * kNumFeatures);
  dec.reserve(b.batch * m * kNumFeatures);
  tgt.reserve(b.batch * m * kNumFeatures);
  for (const TrainingSample* s : samples) {
    if (s->encoder_inputs.size() != n * kNumFeatures || s->encoder_meta.size() != n || s->decoder_meta.size() != m) {
      throw DimensionError("make_batch: sample does not match input_len=" + std::to_string(n) +
                           ", output_len=" + std::to_string(m));
    }
    enc.insert(enc.end(), s->encoder_inputs.begin(), s->encoder_inputs.end());
    const auto shifted = teacher_forcing_inputs(*s, m);
    dec.insert(dec.end(), shifted.begin(), shifted.end());
    tgt.insert(tgt.end(), s->decoder_targets.begin(), s->decoder_targets.end());
    for (std::size_t t = 0; t < n; ++t) {
      b.encoder_meta.push_back(s->encoder_meta[t].index);
      b.encoder_pos.push_back(static_cast<std::int32_t>(t));
    }
    for (std::size_t t = 0; t < m; ++t) {
      b.decoder_meta.push_back(s->decoder_meta[t].index);
      b.decoder_pos.push_back(static_cast<std::int32_t>(t));
    }
  }
  b.encoder_features = Tensor::from({b.batch * n, kNumFeatures}, std::move(enc));
  b.decoder_features = Tensor::from({b.batch * m, kNumFeatures}, std::move(dec));
  b.targets = Tensor::from({b.batch * m, kNumFeatures}, std::move(tgt));
  return b;
}

RupFormer::RupFormer(Hyperparams hp, ModelParams params) : hp_(std::move(hp)), params_(std::move(params)) {
  hp_.validate();
  if (params_.encoder.size() != hp_.encoder_layers || params_.decoder.size() != hp_.decoder_layers ||
      params_.count() != param_count(hp_)) {
    throw DimensionError("RupFormer: parameters do not match hyperparameters");
  }
}

RupFormer RupFormer::create(const Hyperparams& hp, std::uint64_t seed) {
  Rng rng(seed);
  return RupFormer(hp, ModelParams::init(hp, rng));
}

Tensor RupFormer::encode(const Tensor& tokens, std::size_t batch, bool training, Rng& rng) const {
  const std::size_t n = hp_.input_len;
  if (tokens.rank() != 2 || tokens.dim(0) != batch * n || tokens.dim(1) != hp_.d_emb) {
    throw DimensionError("encode: expected [" + std::to_string(batch * n) + "x" + std::to_string(hp_.d_emb) +
                         "] tokens, got " + shape_str(tokens.shape()));
  }
  const auto p = static_cast<float>(hp_.dropout);
  Tensor x = tokens;
  for (const auto& layer : params_.encoder) {
    x = add_norm(x, attention(layer.self_attn, x, x, batch, n, n, hp_.heads, {}), layer.norm1, p, training, rng);
    x = add_norm(x, feed_forward(layer.ff, x), layer.norm2, p, training, rng);
  }
  return x;
}

DecoderOutput RupFormer::decode(const Tensor& memory, const Tensor& decoder_tokens, std::size_t batch, bool training,
                                Rng& rng) const {
  const std::size_t n = hp_.input_len;
  const std::size_t m = hp_.output_len;
  if (memory.rank() != 2 || memory.dim(0) != batch * n || memory.dim(1) != hp_.d_emb) {
    throw DimensionError("decode: memory must be [" + std::to_string(batch * n) + "x" + std::to_string(hp_.d_emb) +
                         "], got " + shape_str(memory.shape()));
  }
  if (decoder_tokens.rank() != 2 || decoder_tokens.dim(0) != batch * m || decoder_tokens.dim(1) != hp_.d_emb) {
    throw DimensionError("decode: decoder tokens must be [" + std::to_string(batch * m) + "x" +
                         std::to_string(hp_.d_emb) + "], got " + shape_str(decoder_tokens.shape()));
  }
  const auto p = static_cast<float>(hp_.dropout);
  const std::vector<float> mask = causal_mask(m);
  Tensor x = decoder_tokens;
  for (const auto& layer : params_.decoder) {
    x = add_norm(x, attention(layer.self_attn, x, x, batch, m, m, hp_.heads, mask), layer.norm1, p, training, rng);
    x = add_norm(x, attention(layer.cross_attn, x, memory, batch, m, n, hp_.heads, {}), layer.norm2, p, training, rng);
    x = add_norm(x, feed_forward(layer.ff, x), layer.norm3, p, training, rng);
  }
  const Tensor out = linear(x, params_.head);
  return {slice_last(out, 0, hp_.n_det), slice_last(out, hp_.n_det, hp_.head_width())};
}

DecoderOutput RupFormer::forward(const BatchInputs& in, bool training, Rng& rng) const {
  const auto p = static_cast<float>(hp_.dropout);
  const Tensor enc_tokens = embed_tokens(params_.embed, in.encoder_features, in.encoder_meta, in.encoder_pos,
                                         Side::kEncoder, p, training, rng);
  const Tensor memory = encode(enc_tokens, in.batch, training, rng);
  const Tensor dec_tokens = embed_tokens(params_.embed, in.decoder_features, in.decoder_meta, in.decoder_pos,
                                         Side::kDecoder, p, training, rng);
  return decode(memory, dec_tokens, in.batch, training, rng);
}

DecoderOutput RupFormer::forward_training(const TrainingSample& sample, bool training, Rng& rng) const {
  const TrainingSample* one[] = {&sample};
  return forward(make_batch(one, hp_), training, rng);
}

DecoderOutput RupFormer::forward_block(std::span<const float> window, std::span<const StepMeta> window_meta,
                                       std::span<const StepMeta> future_meta) const {
  const std::size_t n = hp_.input_len;
  const std::size_t m = hp_.output_len;
  if (window.size() != n * kNumFeatures || window_meta.size() != n || future_meta.size() != m) {
    throw DimensionError("forward_block: expected a " + std::to_string(n) + "-step window and " + std::to_string(m) +
                         " future steps");
  }
  check_grid(window_meta, "forward_block window");
  check_grid(future_meta, "forward_block future");
  if (future_meta.front().time != window_meta.back().time + kStep ||
      future_meta.front().index.carrier != window_meta.front().index.carrier) {
    throw DomainError("forward_block: future metadata does not continue the window");
  }

  NoGradGuard no_grad;
  BatchInputs in;
  in.batch = 1;
  in.encoder_features = Tensor::from({n, kNumFeatures}, std::vector<float>(window.begin(), window.end()));
  in.decoder_features = Tensor::zeros({m, kNumFeatures});
  for (std::size_t t = 0; t < n; ++t) {
    in.encoder_meta.push_back(window_meta[t].index);
    in.encoder_pos.push_back(static_cast<std::int32_t>(t));
  }
  for (std::size_t t = 0; t < m; ++t) {
    in.decoder_meta.push_back(future_meta[t].index);
    in.decoder_pos.push_back(static_cast<std::int32_t>(t));
  }
  Rng unused(0);
  DecoderOutput out = forward(in, false, unused);
  postprocess_quantiles(out);
  return out;
}

}  // namespace rupf
