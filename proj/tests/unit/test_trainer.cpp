#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "rupformer/errors.hpp"
#include "rupformer/trainer.hpp"
#include "json.hpp"

using namespace rupf;

namespace {

// Scalar Adam with decoupled decay, written out independently.
struct ScalarAdam {
  double lr, wd, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return x * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
  }
};

std::vector<TrainingSample> tiny_samples(std::size_t n, std::size_t stride = 1, int carrier = 2) {
  const auto hp = gradcheck::tiny_hyperparams();
  const std::vector<KpiSeries> series = {fixtures::series(carrier, n * stride + 4)};
  const auto norm = Normalizer::fit(series);
  auto s = make_samples(series, norm, hp.input_len, hp.output_len, stride);
  s.resize(n);
  return s;
}

DecoderOutput output_of(std::vector<float> det, std::vector<float> q, std::size_t rows) {
  return {Tensor::from({rows, 8}, std::move(det)), Tensor::from({rows, 3}, std::move(q))};
}

}  // namespace

TEST_CASE("train config defaults") {
  const TrainConfig c;
  CHECK(c.epochs == 200);
  CHECK(c.batch_size == 400);
  CHECK(c.lr == 1e-4);
  CHECK(c.weight_decay == 1e-5);
  CHECK(c.clip_norm == 1.0);
  CHECK(c.patience == 10);
  CHECK(c.alpha == 0.9);
  CHECK(c.beta == 1.2);
  TrainConfig bad = c;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pinball loss examples") {
  CHECK(pinball_loss(1.0, 1.0, 0.5) == 0.0);
  CHECK(pinball_loss(1.0, 0.6, 0.9) == doctest::Approx(0.36));
  CHECK(pinball_loss(0.6, 1.0, 0.9) == doctest::Approx(0.04));
  CHECK_THROWS_AS(pinball_loss(0.5, 0.5, 0.0), DomainError);
  CHECK_THROWS_AS(pinball_loss(0.5, 0.5, 1.0), DomainError);
}

TEST_CASE("pinball minimizer over a grid is the empirical quantile") {
  std::vector<double> sample;
  for (int i = 0; i < 10; ++i) sample.push_back(0.05 + 0.1 * i);
  for (double q : {0.1, 0.5, 0.9}) {
    double best_c = 0.0;
    double best = 1e9;
    for (int i = 0; i <= 1000; ++i) {
      const double c = i / 1000.0;
      double l = 0.0;
      for (double y : sample) l += pinball_loss(y, c, q);
      if (l < best - 1e-12) {
        best = l;
        best_c = c;
      }
    }
    // For q*n integral the minimizers form the interval between the order
    // statistics y_(qn) and y_(qn+1).
    const auto k = static_cast<std::size_t>(std::lround(q * 10));
    CHECK(best_c >= sample[k - 1] - 1e-9);
    CHECK(best_c <= sample[k] + 1e-9);
  }
}

TEST_CASE("total loss") {
  const std::vector<double> quantiles = {0.1, 0.5, 0.9};
  std::vector<float> target(9);
  for (std::size_t i = 0; i < 9; ++i) target[i] = 0.1F * static_cast<float>(i);
  const Tensor tgt = Tensor::from({1, 9}, target);

  SUBCASE("perfect prediction") {
    const auto out = output_of({target.begin(), target.begin() + 8}, {0.8F, 0.8F, 0.8F}, 1);
    CHECK(total_loss(out, tgt, quantiles, 0.9, 1.2).item() == 0.0F);
  }
  SUBCASE("hand-computed one-step case") {
    std::vector<float> det(target.begin(), target.begin() + 8);
    det[0] += 0.2F;  // squared error 0.04
    det[5] -= 0.1F;  // squared error 0.01
    const auto out = output_of(det, {0.7F, 0.85F, 0.95F}, 1);
    // MSE = 0.05 / 8 = 0.00625; y = 0.8:
    //   q=0.1: y > 0.7  -> 0.1 * 0.1  = 0.01
    //   q=0.5: y < 0.85 -> 0.5 * 0.05 = 0.025
    //   q=0.9: y < 0.95 -> 0.1 * 0.15 = 0.015
    const double expected = 0.9 * 0.00625 + 1.2 * (0.01 + 0.025 + 0.015);
    CHECK(total_loss(out, tgt, quantiles, 0.9, 1.2).item() == doctest::Approx(expected).epsilon(1e-6));
    CHECK(std::abs(total_loss(out, tgt, quantiles, 0.9, 1.2).item() - expected) <= 1e-6);
  }
  SUBCASE("beta = 0 reduces to alpha * MSE") {
    std::vector<float> det(8, 0.0F);
    const auto out = output_of(det, {0.0F, 0.0F, 0.0F}, 1);
    double mse = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mse += target[i] * target[i];
    mse /= 8.0;
    CHECK(total_loss(out, tgt, quantiles, 0.9, 0.0).item() == doctest::Approx(0.9 * mse).epsilon(1e-6));
  }
  SUBCASE("shape mismatch") {
    const auto out = output_of(std::vector<float>(16, 0.0F), std::vector<float>(6, 0.0F), 2);
    CHECK_THROWS_AS(total_loss(out, tgt, quantiles, 0.9, 1.2), DimensionError);
  }
  SUBCASE("nonnegative for random outputs") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<float> det(8), q(3);
      for (auto& v : det) v = static_cast<float>(rng.uniform(-1, 2));
      for (auto& v : q) v = static_cast<float>(rng.uniform(-1, 2));
      CHECK(total_loss(output_of(det, q, 1), tgt, quantiles, 0.9, 1.2).item() > 0.0F);
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("first step with unit gradient moves by -lr") {
    Tensor x = Tensor::from({1}, {0.5F}, true);
    AdamOptimizer adam({x}, 1e-3, 0.0);
    x.mutable_grad()[0] = 1.0F;
    adam.step();
    CHECK(x.at(0) == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  }
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    Tensor x = Tensor::from({3}, {0.5F, -1.0F, 2.0F}, true);
    AdamOptimizer adam({x}, 1e-3, 0.0);
    x.zero_grad();
    for (int i = 0; i < 5; ++i) adam.step();
    CHECK(x.at(0) == 0.5F);
    CHECK(x.at(1) == -1.0F);
    CHECK(x.at(2) == 2.0F);
  }
  SUBCASE("decoupled weight decay applies before the Adam delta") {
    Tensor x = Tensor::from({1}, {2.0F}, true);
    AdamOptimizer adam({x}, 0.1, 0.5);
    x.mutable_grad()[0] = 0.0F;
    adam.step();
    CHECK(x.at(0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)));
  }
  SUBCASE("(x-3)^2 from 0 tracks a scalar reference and converges monotonically") {
    Tensor x = Tensor::from({1}, {0.0F}, true);
    AdamOptimizer adam({x}, 0.05, 1e-5);
    ScalarAdam ref{0.05, 1e-5};
    double xr = 0.0;
    double prev_gap = 3.0;
    for (int step = 0; step < 200; ++step) {
      adam.zero_grad();
      const Tensor d = sub(x, Tensor::from({1}, {3.0F}));
      backward(sum(mul(d, d)));
      xr = ref.step(xr, 2.0 * (xr - 3.0));
      adam.step();
      CHECK(x.at(0) == doctest::Approx(xr).epsilon(1e-4));
      const double gap = std::abs(x.at(0) - 3.0);
      // Adam overshoots once it nears the optimum; monotone until then.
      if (step < 50) CHECK(gap < prev_gap);
      prev_gap = gap;
    }
    CHECK(std::abs(xr - 3.0) < 0.1);
  }
  SUBCASE("non-finite gradient aborts without touching parameters") {
    Tensor x = Tensor::from({2}, {1.0F, 2.0F}, true);
    AdamOptimizer adam({x}, 0.1, 0.0);
    x.mutable_grad()[0] = std::nanf("");
    CHECK_THROWS_AS(adam.step(), NumericalError);
    CHECK(x.at(0) == 1.0F);
    CHECK(x.at(1) == 2.0F);
  }
}

TEST_CASE("gradient clipping") {
  auto make = [](float a, float b) {
    Tensor x = Tensor::from({1}, {0.0F}, true);
    Tensor y = Tensor::from({1}, {0.0F}, true);
    x.mutable_grad()[0] = a;
    y.mutable_grad()[0] = b;
    return std::vector<Tensor>{x, y};
  };
  auto small = make(0.3F, 0.4F);
  CHECK(clip_gradients(small, 1.0) == 1.0);
  CHECK(small[0].grad()[0] == 0.3F);
  CHECK(small[1].grad()[0] == 0.4F);

  auto big = make(1.2F, 1.6F);
  CHECK(global_grad_norm(big) == doctest::Approx(2.0));
  CHECK(clip_gradients(big, 1.0) == doctest::Approx(0.5));
  CHECK(std::abs(global_grad_norm(big) - 1.0) <= 1e-6);
  CHECK(big[0].grad()[0] == doctest::Approx(0.6));
  CHECK(big[1].grad()[0] == doctest::Approx(0.8));
  const double cosine = (0.6 * 1.2 + 0.8 * 1.6) / (1.0 * 2.0);
  CHECK(std::abs(cosine - 1.0) <= 1e-6);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = make(static_cast<float>(rng.uniform(-3, 3)), static_cast<float>(rng.uniform(-3, 3)));
    const double before = global_grad_norm(g);
    clip_gradients(g, 1.0);
    CHECK(global_grad_norm(g) <= before + 1e-9);
  }
}

TEST_CASE("early stopping counts stale epochs") {
  EarlyStopping stop(10, 1e-5);
  std::vector<double> val = {1.0, 0.9};
  for (int i = 0; i < 10; ++i) val.push_back(0.9);
  val.push_back(0.1);  // never reached
  std::size_t stopped_at = 0;
  for (std::size_t e = 0; e < val.size(); ++e) {
    stop.update(val[e]);
    if (stop.should_stop()) {
      stopped_at = e + 1;
      break;
    }
  }
  CHECK(stopped_at == 12);
  CHECK(stop.best_epoch() == 2);
  CHECK(stop.best() == 0.9);

  EarlyStopping tiny(2, 0.1);
  CHECK(tiny.update(1.0));
  CHECK_FALSE(tiny.update(0.95));  // improvement below min_delta
  CHECK_FALSE(tiny.update(0.92));
  CHECK(tiny.should_stop());
}

TEST_CASE("one small step decreases the sample loss for most seeds") {
  const auto hp = gradcheck::tiny_hyperparams();
  const auto samples = tiny_samples(100, 1, 6);
  TrainConfig cfg;
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RupFormer model = RupFormer::create(hp, seed);
    const auto& s = samples[seed];
    const std::span<const TrainingSample> one(&s, 1);
    const double before = evaluate_loss(model, one, cfg);
    auto params = model.params().tensors();
    AdamOptimizer adam(params, 1e-3, 0.0);
    Rng rng(0);
    const TrainingSample* ptr[] = {&s};
    const BatchInputs in = make_batch(ptr, hp);
    backward(total_loss(model.forward(in, false, rng), in.targets, hp.quantiles, cfg.alpha, cfg.beta));
    adam.step();
    if (evaluate_loss(model, one, cfg) < before) ++decreased;
  }
  CHECK(decreased >= 95);
}

TEST_CASE("training on 50 samples lowers the loss by at least 20%") {
  const auto hp = gradcheck::tiny_hyperparams();
  const auto train_set = tiny_samples(50);
  const auto val_set = tiny_samples(10, 3, 9);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 10;
  cfg.lr = 3e-3;
  cfg.patience = 100;
  cfg.seed = 11;
  RupFormer model = RupFormer::create(hp, 11);
  const auto result = train(model, train_set, val_set, cfg);
  REQUIRE(result.history.size() == 20);
  CHECK(result.history.back().train_loss <= 0.8 * result.history.front().train_loss);
  for (std::size_t i = 0; i < 20; ++i) CHECK(result.history[i].epoch == i + 1);
}

TEST_CASE("training restores the best validation parameters") {
  const auto hp = gradcheck::tiny_hyperparams();
  const auto train_set = tiny_samples(40);
  const auto val_set = tiny_samples(8, 2, 14);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.lr = 3e-2;  // deliberately large so validation loss bounces
  cfg.patience = 3;
  cfg.seed = 2;
  RupFormer model = RupFormer::create(hp, 2);
  const auto result = train(model, train_set, val_set, cfg);
  CHECK(evaluate_loss(model, val_set, cfg) == doctest::Approx(result.best_val_loss).epsilon(1e-9));
  double min_val = 1e9;
  for (const auto& r : result.history) min_val = std::min(min_val, r.val_loss);
  CHECK(result.best_val_loss == min_val);
  if (result.history.size() < cfg.epochs) CHECK(result.history.back().stopped);
}

TEST_CASE("training is deterministic") {
  const auto hp = gradcheck::tiny_hyperparams();
  const auto train_set = tiny_samples(30);
  const auto val_set = tiny_samples(6, 2, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 7;
  cfg.seed = 77;
  RupFormer a = RupFormer::create(hp, 77);
  RupFormer b = RupFormer::create(hp, 77);
  const auto ra = train(a, train_set, val_set, cfg);
  const auto rb = train(b, train_set, val_set, cfg);
  CHECK(history_jsonl(ra.history) == history_jsonl(rb.history));
  const auto ta = a.params().tensors();
  const auto tb = b.params().tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    CHECK(std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin()));
}

TEST_CASE("history lines") {
  std::vector<EpochRecord> h = {{1, 0.5, 0.4, 1e-4, false}, {2, 0.3, 0.35, 1e-4, true}};
  std::istringstream in(history_jsonl(h));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == n + 1);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("val_loss"));
    CHECK(j.contains("lr"));
    CHECK(j.contains("stopped"));
    ++n;
  }
  CHECK(n == 2);
}

TEST_CASE("empty splits are rejected") {
  const auto hp = gradcheck::tiny_hyperparams();
  RupFormer model = RupFormer::create(hp, 1);
  const auto s = tiny_samples(4);
  CHECK_THROWS_AS(train(model, {}, s, TrainConfig{}), IngestionError);
  CHECK_THROWS_AS(train(model, s, {}, TrainConfig{}), IngestionError);
}
