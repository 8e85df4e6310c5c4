#include "rupformer/trainer.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "rupformer/errors.hpp"

namespace rupf {

namespace {

constexpr std::uint64_t kDropoutStream = 0xD5A61266F0C9392CULL;
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  // splitmix64 finalizer over (seed, epoch)
  std::uint64_t z = seed + kGolden * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || patience == 0) {
    throw ConfigError("train config: epochs, batch_size and patience must be positive");
  }
  if (!(lr > 0.0) || !(weight_decay >= 0.0) || !(clip_norm > 0.0) || !(min_delta >= 0.0)) {
    throw ConfigError("train config: lr and clip_norm must be positive, weight_decay and min_delta nonnegative");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("train config: alpha and beta must be positive");
}

double pinball_loss(double y, double yhat, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("pinball_loss: quantile must lie in (0, 1)");
  return y > yhat ? q * (y - yhat) : (1.0 - q) * (yhat - y);
}

Tensor total_loss(const DecoderOutput& output, const Tensor& targets, std::span<const double> quantiles, double alpha,
                  double beta) {
  const std::size_t rows = output.det.dim(0);
  const std::size_t n_det = output.det.dim(1);
  if (targets.rank() != 2 || targets.dim(0) != rows || targets.dim(1) != n_det + 1 ||
      output.quantiles.shape() != Shape{rows, quantiles.size()}) {
    throw DimensionError("total_loss: outputs " + shape_str(output.det.shape()) + "/" +
                         shape_str(output.quantiles.shape()) + " do not match targets " + shape_str(targets.shape()));
  }
  const Tensor target_det = slice_last(targets, 0, n_det);
  const Tensor target_residual = slice_last(targets, n_det, n_det + 1);
  const Tensor diff = sub(output.det, target_det);
  Tensor loss = scale(mean(mul(diff, diff)), static_cast<float>(alpha));
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    const Tensor q = pinball(slice_last(output.quantiles, i, i + 1), target_residual, static_cast<float>(quantiles[i]));
    loss = add(loss, scale(q, static_cast<float>(beta)));
  }
  return loss;
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double weight_decay, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.size(), 0.0F);
    second_moment_.emplace_back(p.size(), 0.0F);
  }
}

void AdamOptimizer::step() {
  for (const auto& p : params_) {
    for (float g : p.grad()) {
      if (!std::isfinite(g)) throw NumericalError("adam: non-finite gradient encountered; aborting epoch");
    }
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double correction1 = 1.0 - std::pow(beta1_, t);
  const double correction2 = 1.0 - std::pow(beta2_, t);
  const double decay = 1.0 - lr_ * weight_decay_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      const double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
      const double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      const double updated = data[j] * decay - lr_ * m_hat / (std::sqrt(v_hat) + eps_);
      data[j] = static_cast<float>(updated);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(std::span<Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto& g : p.mutable_grad()) g = static_cast<float>(g * factor);
  }
  return factor;
}

bool EarlyStopping::update(double val_loss) {
  ++epochs_;
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    stale_epochs_ = 0;
    return true;
  }
  ++stale_epochs_;
  return false;
}

std::string history_jsonl(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["lr"] = r.lr;
    j["stopped"] = r.stopped;
    out += j.dump();
    out += '\n';
  }
  return out;
}

double evaluate_loss(const RupFormer& model, std::span<const TrainingSample> samples, const TrainConfig& cfg) {
  if (samples.empty()) throw IngestionError("evaluate_loss: no samples");
  NoGradGuard no_grad;
  Rng unused(0);
  double weighted = 0.0;
  std::vector<const TrainingSample*> batch;
  for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(samples.size(), begin + cfg.batch_size);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&samples[i]);
    const BatchInputs in = make_batch(batch, model.hyperparams());
    const DecoderOutput out = model.forward(in, false, unused);
    const double loss = total_loss(out, in.targets, model.hyperparams().quantiles, cfg.alpha, cfg.beta).item();
    weighted += loss * static_cast<double>(end - begin);
  }
  return weighted / static_cast<double>(samples.size());
}

TrainResult train(RupFormer& model, std::span<const TrainingSample> train_samples,
                  std::span<const TrainingSample> val_samples, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_samples.empty()) throw IngestionError("train: training split produced no samples");
  if (val_samples.empty()) throw IngestionError("train: validation split produced no samples");

  std::vector<Tensor> params = model.params().tensors();
  AdamOptimizer adam(params, cfg.lr, cfg.weight_decay);
  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  Rng dropout_rng(cfg.seed ^ kDropoutStream);
  ModelParams best = model.params().clone();
  TrainResult result;

  std::vector<std::size_t> order(train_samples.size());
  std::vector<const TrainingSample*> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(epoch_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);

    double weighted = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_samples[order[i]]);
      const BatchInputs in = make_batch(batch, model.hyperparams());
      const DecoderOutput out = model.forward(in, true, dropout_rng);
      const Tensor loss = total_loss(out, in.targets, model.hyperparams().quantiles, cfg.alpha, cfg.beta);
      if (!std::isfinite(loss.item())) {
        Tape::current().clear();
        throw NumericalError("train: non-finite loss in epoch " + std::to_string(epoch));
      }
      adam.zero_grad();
      backward(loss);
      clip_gradients(params, cfg.clip_norm);
      adam.step();
      weighted += loss.item() * static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(model, val_samples, cfg);
    rec.lr = cfg.lr;
    if (!std::isfinite(rec.val_loss)) throw NumericalError("train: non-finite validation loss in epoch " + std::to_string(epoch));
    if (stopper.update(rec.val_loss)) best = model.params().clone();
    rec.stopped = stopper.should_stop();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.stopped) break;
  }
  adam.zero_grad();

  // Restore the best-validation weights into the live tensors.
  const auto best_tensors = best.tensors();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(best_tensors[i].data().begin(), best_tensors[i].data().end(), params[i].mutable_data().begin());
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best();
  return result;
}

}  // namespace rupf
