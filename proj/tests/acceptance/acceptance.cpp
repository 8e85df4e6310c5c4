// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "commands.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "rupformer/checkpoint.hpp"
#include "rupformer/embedding.hpp"
#include "rupformer/io.hpp"
#include "rupformer/metrics.hpp"
#include "rupformer/rollout.hpp"
#include "rupformer/synth_traffic.hpp"
#include "rupformer/trainer.hpp"

using namespace rupf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rupf_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 1 -------------------------------------------------------------------------
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto r = gradcheck::check_model_smooth(gradcheck::tiny_hyperparams(), 2024);
  const double secs = seconds_since(t0);
  return {r.kinks == 0 && r.checked == param_count(gradcheck::tiny_hyperparams()) && r.failed == 0 && secs < 60.0,
          "seed " + std::to_string(r.seed) + ": " + std::to_string(r.checked) + " entries, " + std::to_string(r.failed) + " above 1e-3, worst " +
              fmt("%.2e", r.worst) + " at " + r.worst_name + fmt(", %.1f s", secs)};
}

// 2 -------------------------------------------------------------------------
double empirical_quantile(std::vector<double> v, double q) {
  // Any minimiser of the mean pinball loss; take the order statistic at ceil(q n).
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(k, 1) - 1];
}

double grid_search_quantile(const std::vector<double>& v, double q) {
  double best = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 10000; ++i) {
    const double c = i / 10000.0;
    double loss = 0.0;
    for (double y : v) loss += y > c ? q * (y - c) : (1.0 - q) * (c - y);
    if (loss < best_loss) {
      best_loss = loss;
      best = c;
    }
  }
  return best;
}

Outcome quantile_semantics() {
  std::mt19937_64 gen(99);
  std::gamma_distribution<double> g(2.0, 0.12);
  std::vector<double> sample(1000);
  for (auto& y : sample) y = std::min(1.0, g(gen));
  std::vector<float> yf(sample.begin(), sample.end());
  const Tensor target = Tensor::from({sample.size(), 1}, yf);
  const Tensor ones = Tensor::full({sample.size(), 1}, 1.0F);

  bool ok = true;
  std::string detail;
  for (double q : {0.1, 0.5, 0.9}) {
    Tensor c = Tensor::full({1, 1}, 0.5F, true);
    auto run = [&](double lr, int steps) {
      AdamOptimizer opt({c}, lr, 0.0);
      for (int s = 0; s < steps; ++s) {
        opt.zero_grad();
        backward(pinball(matmul(ones, c), target, static_cast<float>(q)));
        opt.step();
      }
    };
    run(1e-2, 1500);
    run(1e-3, 1500);
    const double learned = c.at(0);
    const double emp = empirical_quantile(sample, q);
    const double grid = grid_search_quantile(sample, q);
    const bool good = std::abs(learned - emp) <= 0.02 && std::abs(grid - emp) <= 0.02;
    ok &= good;
    detail += fmt("q=%.1f learned %.4f empirical %.4f grid %.4f; ", q, learned, emp, grid);
  }
  return {ok, detail};
}

// 3 -------------------------------------------------------------------------
Outcome parameter_budget() {
  const Hyperparams hp;
  const std::size_t count = param_count(hp);
  const Checkpoint ckpt{hp, TrainConfig{}, Normalizer::fit(std::vector<KpiSeries>{fixtures::series(0, 20)}),
                        RupFormer::create(hp, 1).params()};
  const auto bytes = serialize_checkpoint(ckpt);
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 4);
  const std::size_t payload = bytes.size() - 12 - header_len;
  std::size_t live = 0;
  for (const auto& t : ckpt.params.tensors()) live += t.size();
  const bool ok = count >= 290000 && count <= 320000 && payload == count * 4 && live == count;
  return {ok, std::to_string(count) + " parameters, payload " + std::to_string(payload) + " bytes, file " +
                  std::to_string(bytes.size()) + " bytes"};
}

// 4 -------------------------------------------------------------------------
Outcome rollout_invariants() {
  const Hyperparams hp;
  const RupFormer model = RupFormer::create(hp, 404);
  const std::vector<KpiSeries> series = {fixtures::series(5, 200)};
  const Normalizer norm = Normalizer::fit(series);
  const std::size_t origin = 150;

  std::size_t window_violations = 0, feedback_violations = 0, crossings = 0, blocks = 0;
  auto state = make_rollout_state(series[0], origin, norm, hp.input_len);
  std::vector<BlockTrace> traces;
  const auto week = rollout(model, norm, state, 672, [&](const BlockTrace& t) {
    ++blocks;
    if (t.window.size() != hp.input_len * kNumFeatures || t.window_meta.size() != hp.input_len) ++window_violations;
    traces.push_back(t);
  });
  for (const auto& t : traces) {
    for (std::size_t k = 0; k < t.fed_back.size(); ++k) {
      const auto& f = week[t.block * hp.output_len + k];
      if (std::memcmp(&t.fed_back[k][kResidualIndex], &f.quantiles[1], sizeof(float)) != 0) ++feedback_violations;
    }
  }
  // The next block's window must end with exactly what was fed back.
  for (std::size_t b = 0; b + 1 < traces.size(); ++b) {
    for (std::size_t k = 0; k < hp.output_len; ++k) {
      const std::size_t row = hp.input_len - hp.output_len + k;
      if (std::memcmp(&traces[b + 1].window[row * kNumFeatures], traces[b].fed_back[k].data(),
                      kNumFeatures * sizeof(float)) != 0)
        ++feedback_violations;
    }
  }
  for (const auto& f : week) {
    if (!(f.quantiles[0] <= f.quantiles[1] && f.quantiles[1] <= f.quantiles[2])) ++crossings;
  }

  auto s1 = make_rollout_state(series[0], origin, norm, hp.input_len);
  auto s2 = make_rollout_state(series[0], origin, norm, hp.input_len);
  const auto two = rollout(model, norm, s1, 2 * hp.output_len);
  const auto one = rollout(model, norm, s2, hp.output_len);
  bool prefix = true;
  for (std::size_t i = 0; i < one.size(); ++i) {
    prefix &= std::memcmp(one[i].quantiles.data(), two[i].quantiles.data(), sizeof(one[i].quantiles)) == 0;
    prefix &= std::memcmp(one[i].det_normalized.data(), two[i].det_normalized.data(), sizeof(one[i].det_normalized)) == 0;
  }
  const bool ok = week.size() == 672 && blocks == 336 && window_violations == 0 && feedback_violations == 0 &&
                  crossings == 0 && prefix;
  return {ok, std::to_string(week.size()) + " steps in " + std::to_string(blocks) + " blocks; window violations " +
                  std::to_string(window_violations) + ", feedback mismatches " + std::to_string(feedback_violations) +
                  ", crossings " + std::to_string(crossings) + ", prefix " + (prefix ? "consistent" : "INCONSISTENT")};
}

// 5 -------------------------------------------------------------------------
Outcome desk_scale_learning() {
  const auto t0 = Clock::now();
  const fs::path dir = scratch("desk");
  const nlohmann::json cfg = {{"seed", 42},
                              {"train", {{"epochs", 50}}},
                              {"split", {{"train_days", 60}, {"val_days", 7}, {"test_days", 14}}}};
  std::ofstream((dir / "config.json").string()) << cfg.dump(2);
  const std::string data = (dir / "kpi.csv").string();
  const std::string model = (dir / "model.ckpt").string();
  const std::string report = (dir / "report.json").string();
  const std::string config = (dir / "config.json").string();

  if (cli::run_cli({"gen", "--out", data, "--days", "81", "--carriers", "3", "--seed", "42"}) != 0)
    return {false, "gen failed"};
  if (cli::run_cli({"train", "--data", data, "--config", config, "--out", model, "--history",
                    (dir / "history.jsonl").string()}) != 0)
    return {false, "train failed"};
  if (cli::run_cli({"eval", "--model", model, "--data", data, "--config", config, "--horizon", "96", "--anchors", "4",
                    "--report", report, "--plot-dir", (dir / "plots").string()}) != 0)
    return {false, "eval failed"};

  const auto bytes = read_file_bytes(report);
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  const double mae = j["aggregate"]["mean_mae"];
  const double hit = j["aggregate"]["mean_hit_prob"];
  const double persistence = j["aggregate"]["mean_persistence_mae"];
  const std::size_t anchors = j["metadata"]["anchors"];
  const double secs = seconds_since(t0);
  const bool ok = mae <= 0.08 && hit >= 0.70 && hit <= 0.97 && mae <= 0.8 * persistence && anchors >= 4 &&
                  j["per_carrier"].size() == 3 && secs <= 1200.0;
  return {ok, fmt("MAE %.4f (persistence %.4f), hit probability %.4f, %.0f s", mae, persistence, hit, secs)};
}

// 6 -------------------------------------------------------------------------
Outcome metric_correctness() {
  std::vector<double> truth(100, 0.5), lo(100), hi(100);
  for (std::size_t i = 0; i < 100; ++i) {
    lo[i] = i % 5 == 4 ? 0.55 : 0.45;
    hi[i] = i % 5 == 4 ? 0.65 : 0.55;
  }
  const double hp80 = hit_probability(truth, lo, hi);

  std::mt19937_64 gen(1234);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + gen() % 300;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = u(gen);
      b[i] = u(gen);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::fabs(a[i] - b[i]);
    worst = std::max(worst, std::abs(mae(a, b) - s / static_cast<double>(n)));
  }
  return {hp80 == 0.80 && worst <= 1e-9, fmt("80/100 fixture -> %.17g; worst MAE deviation %.2e over 1000 vectors", hp80, worst)};
}

// 7 -------------------------------------------------------------------------
Outcome determinism_and_persistence() {
  const Hyperparams hp;
  const auto data = generate(default_profiles(2, 8), parse_timestamp("2024-02-01T00:00:00Z"), 6, 8);
  const Normalizer norm = Normalizer::fit(data);
  const auto samples = make_samples(data, norm, hp.input_len, hp.output_len);
  const std::vector<TrainingSample> train_set(samples.begin(), samples.begin() + 800);
  const std::vector<TrainingSample> val_set(samples.begin() + 800, samples.begin() + 1000);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 77;

  auto train_once = [&] {
    RupFormer m = RupFormer::create(hp, cfg.seed);
    train(m, train_set, val_set, cfg);
    return m;
  };
  const RupFormer m1 = train_once();
  const RupFormer m2 = train_once();
  const auto b1 = serialize_checkpoint({hp, cfg, norm, m1.params()});
  const auto b2 = serialize_checkpoint({hp, cfg, norm, m2.params()});
  const bool identical = b1 == b2;

  const fs::path path = scratch("persist") / "m.ckpt";
  save_checkpoint({hp, cfg, norm, m1.params()}, path);
  const Checkpoint back = load_checkpoint(path);
  const RupFormer reloaded(back.hyperparams, back.params);
  auto s1 = make_rollout_state(data[1], 300, norm, hp.input_len);
  auto s2 = make_rollout_state(data[1], 300, back.normalizer, hp.input_len);
  const auto f1 = rollout(m1, norm, s1, 96);
  const auto f2 = rollout(reloaded, back.normalizer, s2, 96);
  bool same = f1.size() == f2.size();
  for (std::size_t i = 0; same && i < f1.size(); ++i) {
    same = std::memcmp(f1[i].quantiles.data(), f2[i].quantiles.data(), sizeof(f1[i].quantiles)) == 0 &&
           std::memcmp(f1[i].det.data(), f2[i].det.data(), sizeof(f1[i].det)) == 0;
  }
  return {identical && same, std::string("checkpoints ") + (identical ? "byte-identical" : "DIFFER") + " (" +
                                 std::to_string(b1.size()) + " bytes); reloaded forecast " +
                                 (same ? "bit-identical" : "DIFFERS")};
}

// 8 -------------------------------------------------------------------------
Outcome causality() {
  Hyperparams hp;
  hp.output_len = 6;
  const RupFormer model = RupFormer::create(hp, 808);
  const std::size_t n = hp.input_len, m = hp.output_len;
  Rng rng(3);
  std::vector<float> enc(n * kNumFeatures), dec(m * kNumFeatures);
  for (auto& v : enc) v = static_cast<float>(rng.uniform());
  for (auto& v : dec) v = static_cast<float>(rng.uniform());
  std::vector<CalendarIndex> enc_meta, dec_meta;
  std::vector<std::int32_t> enc_pos, dec_pos;
  Timestamp t = parse_timestamp("2024-07-19T21:00:00Z");
  for (std::size_t i = 0; i < n; ++i, t += kStep) {
    enc_meta.push_back(calendar_indices(t, 3));
    enc_pos.push_back(static_cast<std::int32_t>(i));
  }
  for (std::size_t i = 0; i < m; ++i, t += kStep) {
    dec_meta.push_back(calendar_indices(t, 3));
    dec_pos.push_back(static_cast<std::int32_t>(i));
  }
  NoGradGuard guard;
  const auto& tables = model.params().embed;
  const Tensor memory =
      model.encode(embed_tokens(tables, Tensor::from({n, kNumFeatures}, enc), enc_meta, enc_pos, Side::kEncoder, 0.0F,
                                false, rng),
                   1, false, rng);
  auto decode = [&](const std::vector<float>& features) {
    const Tensor tokens = embed_tokens(tables, Tensor::from({m, kNumFeatures}, features), dec_meta, dec_pos,
                                       Side::kDecoder, 0.0F, false, rng);
    return model.decode(memory, tokens, 1, false, rng);
  };
  const DecoderOutput base = decode(dec);
  const std::size_t det_w = hp.n_det, q_w = hp.quantiles.size();
  std::size_t leaks = 0, checks = 0, later_changed = 0;
  for (std::size_t j = 1; j < m; ++j) {
    auto perturbed = dec;
    for (std::size_t i = j * kNumFeatures; i < perturbed.size(); ++i) perturbed[i] += 0.25F + 0.1F * static_cast<float>(i % 7);
    const DecoderOutput out = decode(perturbed);
    for (std::size_t k = 0; k < j; ++k) {
      ++checks;
      if (std::memcmp(out.det.data().data() + k * det_w, base.det.data().data() + k * det_w, det_w * sizeof(float)) != 0 ||
          std::memcmp(out.quantiles.data().data() + k * q_w, base.quantiles.data().data() + k * q_w,
                      q_w * sizeof(float)) != 0)
        ++leaks;
    }
    if (std::memcmp(out.det.data().data() + j * det_w, base.det.data().data() + j * det_w, det_w * sizeof(float)) != 0)
      ++later_changed;
  }
  return {leaks == 0 && later_changed == m - 1,
          std::to_string(checks) + " (j, k<j) pairs, " + std::to_string(leaks) + " changed; perturbed positions reacted in " +
              std::to_string(later_changed) + "/" + std::to_string(m - 1) + " cases"};
}

// 9 -------------------------------------------------------------------------
Outcome inference_latency() {
  const Hyperparams hp;
  const RupFormer model = RupFormer::create(hp, 9);
  const auto series = fixtures::series(4, 40);
  const Normalizer norm = Normalizer::fit(std::vector<KpiSeries>{series});
  const auto state = make_rollout_state(series, 20, norm, hp.input_len);
  std::vector<StepMeta> future;
  for (std::size_t k = 0; k < hp.output_len; ++k) {
    const Timestamp t = state.next_timestamp + kStep * static_cast<int>(k);
    future.push_back({t, calendar_indices(t, 4)});
  }
  for (int i = 0; i < 5; ++i) model.forward_block(state.window, state.window_meta, future);
  std::vector<double> ms;
  for (int i = 0; i < 50; ++i) {
    const auto t0 = Clock::now();
    model.forward_block(state.window, state.window_meta, future);
    ms.push_back(seconds_since(t0) * 1e3);
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms[ms.size() / 2];
  return {median <= 50.0, fmt("median %.3f ms, max %.3f ms over 50 calls", median, ms.back())};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"quantile semantics", quantile_semantics},
      {"parameter budget", parameter_budget},
      {"rollout invariants", rollout_invariants},
      {"desk-scale learning", desk_scale_learning},
      {"calibration metrics", metric_correctness},
      {"determinism and persistence", determinism_and_persistence},
      {"decoder causality", causality},
      {"inference latency", inference_latency},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << " -- " << o.detail
              << std::endl;
  }
  return failures;
}
