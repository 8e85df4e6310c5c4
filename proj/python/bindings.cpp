#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "commands.hpp"
#include "rupformer/checkpoint.hpp"
#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"
#include "rupformer/metrics.hpp"
#include "rupformer/rollout.hpp"
#include "rupformer/synth_traffic.hpp"

namespace py = pybind11;
using namespace rupf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> feature_matrix(const KpiSeries& s) {
  py::array_t<double> out({s.records.size(), kNumFeatures});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t t = 0; t < s.records.size(); ++t) {
    const auto f = s.records[t].features();
    for (std::size_t c = 0; c < kNumFeatures; ++c) m(t, c) = f[c];
  }
  return out;
}

py::dict series_to_dict(const KpiSeries& s) {
  std::vector<std::string> stamps;
  stamps.reserve(s.records.size());
  for (const auto& r : s.records) stamps.push_back(format_timestamp(r.timestamp));
  py::dict d;
  d["carrier_id"] = s.carrier_id;
  d["timestamps"] = stamps;
  d["features"] = feature_matrix(s);
  return d;
}

py::dict forecast_to_dict(std::span<const QuantileForecast> fc) {
  const std::size_t k = fc.size();
  std::vector<std::string> stamps;
  py::array_t<double> q({k, std::size_t{3}});
  py::array_t<double> det({k, kNumDeterministic});
  auto qm = q.mutable_unchecked<2>();
  auto dm = det.mutable_unchecked<2>();
  for (std::size_t i = 0; i < k; ++i) {
    stamps.push_back(format_timestamp(fc[i].timestamp));
    for (std::size_t j = 0; j < 3; ++j) qm(i, j) = fc[i].quantiles[j];
    for (std::size_t j = 0; j < kNumDeterministic; ++j) dm(i, j) = fc[i].det[j];
  }
  py::dict d;
  d["timestamps"] = stamps;
  d["quantiles"] = q;
  d["det"] = det;
  return d;
}

/// A trained model together with the scaling it was trained under.
struct Forecaster {
  Checkpoint ckpt;
  RupFormer model;
  std::string hash;

  static Forecaster load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    Checkpoint c = deserialize_checkpoint(bytes);
    RupFormer m(c.hyperparams, c.params);
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", crc32_of(bytes));
    return {std::move(c), std::move(m), buf};
  }

  const KpiSeries& carrier(const std::vector<KpiSeries>& all, int id) const {
    for (const auto& s : all)
      if (s.carrier_id == id) return s;
    throw ConfigError("unknown carrier " + std::to_string(id));
  }
};

}  // namespace

PYBIND11_MODULE(_rupformer, m) {
  m.doc() = "Residual-PRB forecasting: synthetic KPI data, transformer training, recursive quantile forecasts";

  py::register_exception<Error>(m, "RupfError");

  m.attr("NUM_FEATURES") = kNumFeatures;
  m.attr("FEATURE_NAMES") = std::vector<std::string>{"prb_mean", "prb_total", "active_tti", "prb_pdsch", "prb_pucch",
                                                     "ue_max",   "ue_avg",    "dl_tput",    "residual_prb"};

  m.def("residual_ratio", &residual_ratio, py::arg("n_total"), py::arg("n_used"));
  m.def(
      "calendar_indices",
      [](const std::string& ts, int carrier) {
        const auto c = calendar_indices(parse_timestamp(ts), carrier);
        return py::make_tuple(c.month, c.weekday, c.hour, c.minute_slot, c.carrier);
      },
      py::arg("timestamp"), py::arg("carrier_id"), "(month, weekday, hour, minute_slot, carrier)");
  m.def("pinball_loss", &pinball_loss, py::arg("y"), py::arg("yhat"), py::arg("q"));

  py::class_<Hyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("d_emb", &Hyperparams::d_emb)
      .def_readwrite("encoder_layers", &Hyperparams::encoder_layers)
      .def_readwrite("decoder_layers", &Hyperparams::decoder_layers)
      .def_readwrite("heads", &Hyperparams::heads)
      .def_readwrite("d_ff", &Hyperparams::d_ff)
      .def_readwrite("dropout", &Hyperparams::dropout)
      .def_readwrite("input_len", &Hyperparams::input_len)
      .def_readwrite("output_len", &Hyperparams::output_len)
      .def_readwrite("quantiles", &Hyperparams::quantiles)
      .def("validate", &Hyperparams::validate);
  m.def("param_count", &param_count, py::arg("hyperparams"));

  m.def(
      "generate",
      [](int carriers, int days, std::uint64_t seed, const std::string& start) {
        const auto profiles = default_profiles(carriers, seed);
        py::list out;
        for (const auto& s : generate(profiles, parse_timestamp(start), days, seed)) out.append(series_to_dict(s));
        return out;
      },
      py::arg("carriers") = 3, py::arg("days") = 7, py::arg("seed") = 0, py::arg("start") = "2024-01-01T00:00:00Z",
      "Synthetic series as dicts with carrier_id, timestamps and an (n, 9) feature matrix.");
  m.def(
      "load_csv", [](const std::filesystem::path& p) {
        py::list out;
        for (const auto& s : load_csv(p)) out.append(series_to_dict(s));
        return out;
      },
      py::arg("path"));

  m.def("mae", [](const Array& t, const Array& p) { return mae(to_vector(t), to_vector(p)); }, py::arg("truth"),
        py::arg("median"));
  m.def(
      "hit_probability",
      [](const Array& t, const Array& lo, const Array& hi) { return hit_probability(to_vector(t), to_vector(lo), to_vector(hi)); },
      py::arg("truth"), py::arg("lower"), py::arg("upper"));
  m.def("abs_err_std", [](const Array& t, const Array& p) { return abs_err_std(to_vector(t), to_vector(p)); },
        py::arg("truth"), py::arg("median"));

  m.def(
      "render_plot_svg",
      [](const Array& truth, const Array& q10, const Array& q50, const Array& q90, const std::string& start,
         const std::string& title) {
        const auto t = to_vector(truth), lo = to_vector(q10), mid = to_vector(q50), hi = to_vector(q90);
        if (lo.size() != t.size() || mid.size() != t.size() || hi.size() != t.size())
          throw DimensionError("render_plot_svg: arrays differ in length");
        std::vector<QuantileForecast> fc(t.size());
        Timestamp ts = parse_timestamp(start);
        for (std::size_t i = 0; i < t.size(); ++i, ts += kStep) {
          fc[i].timestamp = ts;
          fc[i].quantiles = {static_cast<float>(lo[i]), static_cast<float>(mid[i]), static_cast<float>(hi[i])};
        }
        return render_plot_svg(t, fc, title);
      },
      py::arg("truth"), py::arg("q10"), py::arg("q50"), py::arg("q90"), py::arg("start") = "2024-01-01T00:00:00Z",
      py::arg("title") = "");

  py::class_<Forecaster>(m, "Forecaster")
      .def_static("load", &Forecaster::load, py::arg("path"))
      .def_property_readonly("hyperparams", [](const Forecaster& f) { return f.ckpt.hyperparams; })
      .def_property_readonly("model_hash", [](const Forecaster& f) { return f.hash; })
      .def_property_readonly("param_count", [](const Forecaster& f) { return f.ckpt.params.count(); })
      .def(
          "forecast",
          [](const Forecaster& f, const std::filesystem::path& data, int carrier, std::size_t origin, std::size_t horizon) {
            const auto all = load_csv(data);
            RolloutState st = make_rollout_state(f.carrier(all, carrier), origin, f.ckpt.normalizer,
                                                 f.ckpt.hyperparams.input_len);
            return forecast_to_dict(rollout(f.model, f.ckpt.normalizer, st, horizon));
          },
          py::arg("data"), py::arg("carrier"), py::arg("origin"), py::arg("horizon") = 96,
          "Rollout of `horizon` steps whose first step is record `origin` of the carrier.")
      .def(
          "evaluate",
          [](const Forecaster& f, const std::filesystem::path& data, std::size_t horizon, std::size_t anchors) {
            const auto all = load_csv(data);
            const auto report = evaluate(f.model, f.ckpt.normalizer, all, horizon, anchors, f.hash);
            return py::module_::import("json").attr("loads")(report.to_json().dump());
          },
          py::arg("data"), py::arg("horizon") = 96, py::arg("anchors") = 1);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::run_cli(args);
      },
      py::arg("args"), "Runs a command-line subcommand in-process and returns its exit code.");
}
