#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "rupformer/checkpoint.hpp"
#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"
#include "rupformer/metrics.hpp"
#include "rupformer/rollout.hpp"
#include "rupformer/synth_traffic.hpp"
#include "rupformer/trainer.hpp"

namespace rupf::cli {

namespace {

namespace fs = std::filesystem;

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// RUPF_LOG=error|warn|info|debug controls stderr chatter; default is info.
LogLevel log_level() {
  const char* env = std::getenv("RUPF_LOG");
  if (env == nullptr) return LogLevel::kInfo;
  const std::string v = env;
  if (v == "error") return LogLevel::kError;
  if (v == "warn") return LogLevel::kWarn;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << msg << '\n';
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (!force && fs::exists(path)) {
    throw ConfigError(path.string() + " already exists (pass --force to overwrite)");
  }
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

std::vector<KpiSeries> synthesize(const SynthSettings& synth, std::uint64_t seed) {
  if (synth.carriers < 1 || synth.carriers > kMaxCarriers) {
    throw ConfigError("carriers must be in 1.." + std::to_string(kMaxCarriers));
  }
  if (synth.days < 1) throw ConfigError("days must be at least 1");
  const auto profiles = default_profiles(synth.carriers, seed);
  return generate(profiles, parse_timestamp(synth.start), synth.days, seed);
}

std::vector<KpiSeries> load_data(const std::string& data_flag, const RunConfig& cfg) {
  if (!data_flag.empty()) return load_csv(data_flag);
  if (cfg.data.csv_path) return load_csv(*cfg.data.csv_path);
  log(LogLevel::kInfo, "no --data given; generating synthetic traffic from the config");
  return synthesize(cfg.data.synth, cfg.seed);
}

struct GenOptions {
  std::string config;
  std::string out;
  std::optional<int> days;
  std::optional<int> carriers;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int cmd_gen(const GenOptions& o) {
  RunConfig cfg = config_or_default(o.config);
  SynthSettings synth = cfg.data.synth;
  if (o.days) synth.days = *o.days;
  if (o.carriers) synth.carriers = *o.carriers;
  const std::uint64_t seed = o.seed.value_or(cfg.seed);
  refuse_overwrite(o.out, o.force);
  const auto series = synthesize(synth, seed);
  save_csv(o.out, series);
  std::size_t rows = 0;
  for (const auto& s : series) rows += s.records.size();
  std::cout << rows << " rows written to " << o.out << '\n';
  return kOk;
}

struct TrainOptions {
  std::string data;
  std::string config;
  std::string out;
  std::string history;
};

int cmd_train(const TrainOptions& o) {
  const RunConfig cfg = config_or_default(o.config);
  const auto series = load_data(o.data, cfg);
  const Hyperparams& hp = cfg.hyperparams;
  const DataSplit split = chronological_split(series, resolve_split(cfg.split, series), hp.input_len + hp.output_len);
  const Normalizer normalizer = Normalizer::fit(split.train);
  for (const auto& w : normalizer.warnings()) log(LogLevel::kWarn, w);
  const auto train_samples = make_samples(split.train, normalizer, hp.input_len, hp.output_len);
  const auto val_samples = make_samples(split.val, normalizer, hp.input_len, hp.output_len);
  log(LogLevel::kInfo, std::to_string(train_samples.size()) + " training / " + std::to_string(val_samples.size()) +
                           " validation samples; " + std::to_string(param_count(hp)) + " parameters");

  RupFormer model = RupFormer::create(hp, cfg.seed);
  const auto result = train(model, train_samples, val_samples, cfg.train, [&](const EpochRecord& r) {
    std::ostringstream line;
    line << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss;
    log(LogLevel::kInfo, line.str());
  });
  save_checkpoint({hp, cfg.train, normalizer, model.params()}, o.out);
  if (!o.history.empty()) write_file_atomic(o.history, history_jsonl(result.history));
  std::cout << "trained " << result.history.size() << " epochs, best epoch " << result.best_epoch
            << " (val loss " << result.best_val_loss << "); checkpoint written to " << o.out << '\n';
  return kOk;
}

const KpiSeries& find_carrier(const std::vector<KpiSeries>& series, int carrier) {
  for (const auto& s : series) {
    if (s.carrier_id == carrier) return s;
  }
  throw ConfigError("unknown carrier " + std::to_string(carrier) + " (not present in the data)");
}

struct ForecastOptions {
  std::string model;
  std::string data;
  int carrier = 0;
  std::string from;
  std::size_t horizon = 96;
  std::string out;
};

int cmd_forecast(const ForecastOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.model);
  const RupFormer model(ckpt.hyperparams, ckpt.params);
  const auto all = load_csv(o.data);
  const KpiSeries& series = find_carrier(all, o.carrier);
  const std::size_t n = ckpt.hyperparams.input_len;

  // --from names the first forecast step; it may sit one step past the data.
  const Timestamp from = parse_timestamp(o.from);
  std::size_t origin = series.records.size();
  bool found = false;
  for (std::size_t i = 0; i < series.records.size(); ++i) {
    if (series.records[i].timestamp == from) {
      origin = i;
      found = true;
      break;
    }
  }
  if (!found && !(series.records.empty() == false && from == series.records.back().timestamp + kStep)) {
    throw ConfigError("--from " + o.from + " is not on carrier " + std::to_string(o.carrier) + "'s grid");
  }
  if (origin < n) {
    throw ConfigError("--from " + o.from + " has " + std::to_string(origin) + " preceding observations; the model needs " +
                      std::to_string(n) + " (input_len) of history");
  }
  RolloutState state = make_rollout_state(series, origin, ckpt.normalizer, n);
  const auto forecast = rollout(model, ckpt.normalizer, state, o.horizon);
  forecast_to_csv(forecast, o.out);
  std::cout << forecast.size() << " forecast rows written to " << o.out << '\n';
  return kOk;
}

struct EvalOptions {
  std::string model;
  std::string data;
  std::string config;
  std::size_t horizon = 96;
  std::size_t anchors = 1;
  std::string report;
  std::string plot_dir;
};

int cmd_eval(const EvalOptions& o) {
  const auto bytes = read_file_bytes(o.model);
  const Checkpoint ckpt = deserialize_checkpoint(bytes);
  const RupFormer model(ckpt.hyperparams, ckpt.params);
  auto series = load_csv(o.data);
  if (!o.config.empty()) {
    const RunConfig cfg = load_run_config(o.config);
    const auto& hp = ckpt.hyperparams;
    series = chronological_split(series, resolve_split(cfg.split, series), hp.input_len + hp.output_len).test;
  }
  std::vector<Trajectory> trajectories;
  const EvalReport report =
      evaluate(model, ckpt.normalizer, series, o.horizon, o.anchors, hex32(crc32_of(bytes)), &trajectories);
  write_file_atomic(o.report, report.to_json().dump(2) + "\n");
  if (!o.plot_dir.empty()) {
    fs::create_directories(o.plot_dir);
    std::map<int, bool> plotted;
    for (const auto& t : trajectories) {
      if (plotted[t.carrier_id]) continue;
      plotted[t.carrier_id] = true;
      const fs::path path = fs::path(o.plot_dir) / ("carrier_" + std::to_string(t.carrier_id) + ".svg");
      emit_plot_svg(t.truth, t.forecast, path,
                    "carrier " + std::to_string(t.carrier_id) + ", " + std::to_string(t.truth.size()) + "-step forecast");
    }
  }
  std::cout << "mean MAE " << report.mean_mae << ", mean hit probability " << report.mean_hit_prob
            << " (persistence MAE " << report.mean_persistence_mae << "); report written to " << o.report << '\n';
  return kOk;
}

}  // namespace

SplitSpec resolve_split(const SplitDays& split, std::span<const KpiSeries> series) {
  const double want = split.train_days + split.val_days + split.test_days;
  Timestamp start = Timestamp::max();
  Timestamp end = Timestamp::min();
  for (const auto& s : series) {
    if (s.records.empty()) continue;
    start = std::min(start, s.records.front().timestamp);
    end = std::max(end, s.records.back().timestamp + kStep);
  }
  if (start >= end) throw IngestionError("no records to split");
  const double have = static_cast<double>((end - start) / kStep) / static_cast<double>(kStepsPerDay);
  if (have + 1e-9 >= want) return SplitSpec::by_days(split.train_days, split.val_days, split.test_days);
  log(LogLevel::kInfo, "data spans " + std::to_string(have) + " days, fewer than the configured " +
                           std::to_string(want) + "; splitting proportionally");
  return SplitSpec::by_fractions(split.train_days / want, split.val_days / want, split.test_days / want);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Residual PRB forecasting with an encoder-decoder transformer"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic carrier KPI traffic as CSV");
  gen_cmd->add_option("--config", gen.config, "Run config JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output CSV")->required();
  gen_cmd->add_option("--days", gen.days, "Days of traffic")->check(CLI::Range(1, 3660));
  gen_cmd->add_option("--carriers", gen.carriers, "Number of carriers")->check(CLI::Range(1, kMaxCarriers));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing output file");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", tr.data, "KPI CSV (default: config data section)")->check(CLI::ExistingFile);
  train_cmd->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", tr.history, "Epoch history JSONL");

  ForecastOptions fc;
  auto* fc_cmd = app.add_subcommand("forecast", "Recursive multi-step forecast for one carrier");
  fc_cmd->add_option("--model", fc.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  fc_cmd->add_option("--data", fc.data, "KPI CSV holding the history")->required()->check(CLI::ExistingFile);
  fc_cmd->add_option("--carrier", fc.carrier, "Carrier id")->required()->check(CLI::Range(0, kMaxCarriers - 1));
  fc_cmd->add_option("--from", fc.from, "Timestamp of the first forecast step")->required();
  fc_cmd->add_option("--horizon", fc.horizon, "Steps to forecast")->check(CLI::Range(1, 1000000));
  fc_cmd->add_option("--out", fc.out, "Forecast CSV")->required();

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate recursive forecasts on a test span");
  ev_cmd->add_option("--model", ev.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--data", ev.data, "KPI CSV; the whole file is the test span unless --config is given")
      ->required()
      ->check(CLI::ExistingFile);
  ev_cmd->add_option("--config", ev.config, "Run config whose split selects the test span")->check(CLI::ExistingFile);
  ev_cmd->add_option("--horizon", ev.horizon, "Steps per rollout")->check(CLI::Range(1, 1000000));
  ev_cmd->add_option("--anchors", ev.anchors, "Rollout origins per carrier")->check(CLI::Range(1, 1000000));
  ev_cmd->add_option("--report", ev.report, "Report JSON")->required();
  ev_cmd->add_option("--plot-dir", ev.plot_dir, "Directory for per-carrier SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*fc_cmd) return cmd_forecast(fc);
    if (*ev_cmd) return cmd_eval(ev);
  } catch (const NumericalError& e) {
    log(LogLevel::kError, e.what());
    return kNumerical;
  } catch (const IoError& e) {
    log(LogLevel::kError, e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    log(LogLevel::kError, e.what());
    return kIo;
  } catch (const Error& e) {
    log(LogLevel::kError, e.what());
    return kUsage;
  } catch (const std::exception& e) {
    log(LogLevel::kError, std::string("unexpected failure: ") + e.what());
    return kIo;
  }
  return kUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("rupformer");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(storage.size()), argv.data());
}

}  // namespace rupf::cli
