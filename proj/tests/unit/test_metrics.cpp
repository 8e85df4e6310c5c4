#include <filesystem>
#include <random>
#include <regex>

#include "doctest.h"
#include "fixtures.hpp"
#include "rupformer/errors.hpp"
#include "rupformer/metrics.hpp"

using namespace rupf;
namespace fs = std::filesystem;

namespace {

double naive_mae(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(static_cast<long double>(a[i]) - b[i]);
  return static_cast<double>(s / a.size());
}

// Two passes: mean first, then squared deviations.
double two_pass_std(const std::vector<double>& v) {
  long double m = 0.0L;
  for (double x : v) m += x;
  m /= v.size();
  long double s = 0.0L;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(static_cast<double>(s / v.size()));
}

QuantileForecast step(float lo, float mid, float hi, Timestamp t = {}) {
  QuantileForecast f;
  f.timestamp = t;
  f.quantiles = {lo, mid, hi};
  return f;
}

}  // namespace

TEST_CASE("mae") {
  const std::vector<double> truth = {0.5, 0.7};
  const std::vector<double> pred = {0.4, 0.9};
  CHECK(mae(truth, pred) == doctest::Approx(0.15).epsilon(1e-12));

  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + gen() % 200;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = u(gen);
      b[i] = u(gen);
    }
    CHECK(std::abs(mae(a, b) - naive_mae(a, b)) <= 1e-9);
  }
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(mae(truth, std::vector<double>{0.1}), DimensionError);
}

TEST_CASE("hit probability") {
  const std::vector<double> truth = {0.3, 0.5, 0.9, 0.2};
  const std::vector<double> lo = {0.2, 0.4, 0.1, 0.0};
  const std::vector<double> hi = {0.4, 0.6, 0.5, 0.3};
  CHECK(hit_probability(truth, lo, hi) == 0.75);

  const std::vector<double> zeros(4, 0.0), ones(4, 1.0);
  CHECK(hit_probability(truth, zeros, ones) == 1.0);

  // Bounds are inclusive.
  CHECK(hit_probability(std::vector<double>{0.3}, std::vector<double>{0.3}, std::vector<double>{0.3}) == 1.0);
  CHECK(hit_probability(std::vector<double>{0.4}, std::vector<double>{0.1}, std::vector<double>{0.4}) == 1.0);

  std::vector<double> t100(100), l100(100), h100(100);
  for (std::size_t i = 0; i < 100; ++i) {
    t100[i] = 0.5;
    l100[i] = i < 80 ? 0.4 : 0.6;
    h100[i] = i < 80 ? 0.6 : 0.7;
  }
  CHECK(hit_probability(t100, l100, h100) == 0.8);

  // Invariant under any joint permutation of the steps.
  std::mt19937 gen(3);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), gen);
  std::vector<double> tp(100), lp(100), hp(100);
  for (std::size_t i = 0; i < 100; ++i) {
    tp[i] = t100[idx[i]];
    lp[i] = l100[idx[i]];
    hp[i] = h100[idx[i]];
  }
  CHECK(hit_probability(tp, lp, hp) == 0.8);

  CHECK_THROWS_AS(hit_probability(std::vector<double>{0.5}, std::vector<double>{0.6}, std::vector<double>{0.4}),
                  DomainError);
}

TEST_CASE("absolute error spread") {
  CHECK(abs_err_std(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.7}) == doctest::Approx(0.1).epsilon(1e-12));
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(50), b(50), e(50);
    for (std::size_t i = 0; i < 50; ++i) {
      a[i] = u(gen);
      b[i] = u(gen);
      e[i] = std::abs(a[i] - b[i]);
    }
    CHECK(std::abs(abs_err_std(a, b) - two_pass_std(e)) <= 1e-12);
  }
  CHECK_THROWS_AS(abs_err_std(std::vector<double>{0.1}, std::vector<double>{0.2}), DomainError);
}

TEST_CASE("anchor positions") {
  CHECK(anchor_positions(200, 4, 96, 1) == std::vector<std::size_t>{4});
  CHECK(anchor_positions(200, 4, 96, 2) == std::vector<std::size_t>{4, 104});
  const auto a = anchor_positions(500, 4, 96, 5);
  CHECK(a.size() == 5);
  CHECK(a.front() == 4);
  CHECK(a.back() == 404);
  CHECK_THROWS_AS(anchor_positions(50, 4, 96, 1), DomainError);
  CHECK_THROWS_AS(anchor_positions(200, 4, 96, 0), DomainError);
  CHECK_THROWS_AS(anchor_positions(102, 4, 96, 4), DomainError);
}

TEST_CASE("evaluate on one carrier with one anchor matches a direct block forecast") {
  const RupFormer model = RupFormer::create(Hyperparams{}, 12);
  const std::vector<KpiSeries> series = {fixtures::series(6, 30)};
  const auto norm = Normalizer::fit(series);
  std::vector<Trajectory> traj;
  const auto report = evaluate(model, norm, series, 2, 1, "abc", &traj);
  REQUIRE(report.carriers.size() == 1);
  REQUIRE(traj.size() == 1);
  CHECK(traj[0].origin == 4);

  const auto& recs = series[0].records;
  std::vector<float> window;
  std::vector<StepMeta> meta, future;
  for (std::size_t t = 0; t < 4; ++t) {
    const auto f = normalized_features(recs[t], norm);
    window.insert(window.end(), f.begin(), f.end());
    meta.push_back({recs[t].timestamp, calendar_indices(recs[t].timestamp, 6)});
  }
  for (std::size_t t = 4; t < 6; ++t) future.push_back({recs[t].timestamp, calendar_indices(recs[t].timestamp, 6)});
  const auto out = model.forward_block(window, meta, future);
  std::vector<double> truth, lo, mid, hi;
  for (std::size_t k = 0; k < 2; ++k) {
    truth.push_back(recs[4 + k].residual_prb);
    lo.push_back(out.quantiles.at(k * 3 + 0));
    mid.push_back(out.quantiles.at(k * 3 + 1));
    hi.push_back(out.quantiles.at(k * 3 + 2));
  }
  const auto& c = report.carriers[0];
  CHECK(c.mae == doctest::Approx(naive_mae(truth, mid)).epsilon(1e-12));
  CHECK(c.hit_prob == hit_probability(truth, lo, hi));
  CHECK(c.abs_err_std == doctest::Approx(abs_err_std(truth, mid)).epsilon(1e-12));
  const std::vector<double> persist(2, recs[3].residual_prb);
  CHECK(c.persistence_mae == doctest::Approx(naive_mae(truth, persist)).epsilon(1e-12));
  CHECK(report.mean_mae == c.mae);
  CHECK(report.mae_std == 0.0);
  CHECK(report.model_hash == "abc");
}

TEST_CASE("aggregates are uniform means over carriers and anchors") {
  const RupFormer model = RupFormer::create(Hyperparams{}, 13);
  const std::vector<KpiSeries> series = {fixtures::series(1, 140), fixtures::series(2, 140), fixtures::series(9, 140)};
  const auto norm = Normalizer::fit(series);
  std::vector<Trajectory> traj;
  const auto report = evaluate(model, norm, series, 24, 3, {}, &traj);
  REQUIRE(report.carriers.size() == 3);
  CHECK(traj.size() == 9);

  double m = 0.0;
  for (const auto& c : report.carriers) {
    CHECK(c.anchors == 3);
    CHECK(c.horizon == 24);
    CHECK(c.hit_prob >= 0.0);
    CHECK(c.hit_prob <= 1.0);
    m += c.mae;
  }
  m /= 3.0;
  CHECK(std::abs(report.mean_mae - m) <= 1e-12);
  std::vector<double> maes;
  for (const auto& c : report.carriers) maes.push_back(c.mae);
  CHECK(std::abs(report.mae_std - two_pass_std(maes)) <= 1e-12);

  // Carrier 1's MAE is the anchor average of its trajectories.
  double per_anchor = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> mid;
    for (const auto& f : traj[i].forecast) mid.push_back(f.quantiles[1]);
    per_anchor += naive_mae(traj[i].truth, mid);
  }
  CHECK(report.carriers[0].mae == doctest::Approx(per_anchor / 3.0).epsilon(1e-12));

  const auto j = report.to_json();
  CHECK(j["per_carrier"].size() == 3);
  CHECK(j["aggregate"].contains("mean_mae"));
  CHECK(j["aggregate"].contains("mae_std"));
  CHECK(j["aggregate"].contains("mean_hit_prob"));
  CHECK(j["metadata"]["horizon"] == 24);
  CHECK(j["metadata"]["anchors"] == 3);
  CHECK(j["metadata"]["data_start"] == "2024-03-04T00:00:00Z");

  CHECK_THROWS_AS(evaluate(model, norm, std::span<const KpiSeries>{}, 24, 1), DomainError);
}

TEST_CASE("plot svg") {
  const std::size_t k = 12;
  std::vector<double> truth;
  std::vector<QuantileForecast> fc;
  Timestamp t = parse_timestamp("2024-05-01T00:00:00Z");
  for (std::size_t i = 0; i < k; ++i, t += kStep) {
    truth.push_back(0.1 + 0.05 * static_cast<double>(i));
    fc.push_back(step(0.05F * i, 0.05F * i + 0.1F, 0.05F * i + 0.2F, t));
  }
  const std::string svg = render_plot_svg(truth, fc, "carrier <3>");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("carrier &lt;3&gt;") != std::string::npos);
  CHECK(svg.find("id=\"median\"") != std::string::npos);
  CHECK(svg.find("id=\"truth\"") != std::string::npos);

  const std::regex band_re("<polygon[^>]*id=\"band\"[^>]*points=\"([^\"]*)\"|<polygon[^>]*points=\"([^\"]*)\"[^>]*id=\"band\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, band_re));
  const std::string pts = m[1].matched ? m[1].str() : m[2].str();
  std::vector<std::pair<double, double>> vertices;
  const std::regex pair_re("(-?[0-9.]+),(-?[0-9.]+)");
  for (auto it = std::sregex_iterator(pts.begin(), pts.end(), pair_re); it != std::sregex_iterator(); ++it) {
    vertices.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
  }
  REQUIRE(vertices.size() == 2 * k);
  // Upper edge runs left to right, lower edge comes back; SVG y grows downwards.
  for (std::size_t i = 0; i + 1 < k; ++i) CHECK(vertices[i].first < vertices[i + 1].first);
  for (std::size_t i = 0; i < k; ++i) {
    CHECK(vertices[i].first == doctest::Approx(vertices[2 * k - 1 - i].first));
    CHECK(vertices[i].second <= vertices[2 * k - 1 - i].second);
  }

  const auto dir = fs::temp_directory_path() / "rupf_plot_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  emit_plot_svg(truth, fc, dir / "ok.svg");
  CHECK(fs::exists(dir / "ok.svg"));
  CHECK_THROWS_AS(emit_plot_svg(std::vector<double>{}, std::vector<QuantileForecast>{}, dir / "empty.svg"), DomainError);
  CHECK_FALSE(fs::exists(dir / "empty.svg"));
  CHECK_THROWS_AS(render_plot_svg(std::vector<double>{0.1}, fc, ""), DimensionError);
}
