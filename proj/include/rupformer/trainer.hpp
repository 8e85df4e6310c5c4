#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rupformer/kpi_data.hpp"
#include "rupformer/model.hpp"
#include "rupformer/tensor.hpp"

namespace rupf {

/// Optimization settings; defaults are the reference training protocol.
struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 400;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double clip_norm = 1.0;
  std::size_t patience = 10;
  double min_delta = 1e-5;
  double alpha = 0.9;  // weight of the deterministic MSE term
  double beta = 1.2;   // weight of the summed pinball terms
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// q*(y - yhat) when y > yhat, else (1 - q)*(yhat - y).
double pinball_loss(double y, double yhat, double q);

/// alpha * MSE(det, targets[:, 0:8]) + beta * sum_q pinball(quantile_q, targets[:, 8]).
Tensor total_loss(const DecoderOutput& output, const Tensor& targets, std::span<const double> quantiles, double alpha,
                  double beta);

/// Adam with bias correction and decoupled weight decay
/// (param <- param * (1 - lr * weight_decay) before the Adam update).
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// Throws NumericalError if any gradient is non-finite; parameters are left
  /// untouched in that case.
  void step();
  void zero_grad();
  std::size_t steps() const { return step_count_; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> first_moment_;
  std::vector<std::vector<float>> second_moment_;
  double lr_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t step_count_ = 0;
};

double global_grad_norm(std::span<const Tensor> params);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the factor applied (1 when untouched).
double clip_gradients(std::span<Tensor> params, double max_norm);

/// Patience counter on a validation signal.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Records one epoch's validation loss. Returns true when it is a new best.
  bool update(double val_loss);
  bool should_stop() const { return stale_epochs_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_epochs_ = 0;
  std::size_t epochs_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool stopped = false;
};

std::string history_jsonl(std::span<const EpochRecord> history);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean L_total over samples with teacher forcing and dropout off.
double evaluate_loss(const RupFormer& model, std::span<const TrainingSample> samples, const TrainConfig& cfg);

/// Mini-batch training with per-epoch validation and early stopping. On
/// return `model` holds the best-validation parameters.
TrainResult train(RupFormer& model, std::span<const TrainingSample> train_samples,
                  std::span<const TrainingSample> val_samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace rupf
