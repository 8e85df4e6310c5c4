#include "rupformer/run_config.hpp"

#include <fstream>
#include <set>

#include "rupformer/errors.hpp"

namespace rupf {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: key '" + std::string(key) + "' in section '" + section + "' has the wrong type");
  }
}

}  // namespace

json hyperparams_to_json(const Hyperparams& hp) {
  return {{"d_emb", hp.d_emb},
          {"encoder_layers", hp.encoder_layers},
          {"decoder_layers", hp.decoder_layers},
          {"heads", hp.heads},
          {"d_ff", hp.d_ff},
          {"dropout", hp.dropout},
          {"input_len", hp.input_len},
          {"output_len", hp.output_len},
          {"quantiles", hp.quantiles},
          {"n_features", hp.n_features},
          {"n_det", hp.n_det}};
}

Hyperparams hyperparams_from_json(const json& j) {
  const std::string s = "hyperparams";
  reject_unknown(j, {"d_emb", "encoder_layers", "decoder_layers", "heads", "d_ff", "dropout", "input_len",
                     "output_len", "quantiles", "n_features", "n_det"},
                 s);
  Hyperparams hp;
  read(j, "d_emb", hp.d_emb, s);
  read(j, "encoder_layers", hp.encoder_layers, s);
  read(j, "decoder_layers", hp.decoder_layers, s);
  read(j, "heads", hp.heads, s);
  read(j, "d_ff", hp.d_ff, s);
  read(j, "dropout", hp.dropout, s);
  read(j, "input_len", hp.input_len, s);
  read(j, "output_len", hp.output_len, s);
  read(j, "quantiles", hp.quantiles, s);
  read(j, "n_features", hp.n_features, s);
  read(j, "n_det", hp.n_det, s);
  hp.validate();
  return hp;
}

json train_config_to_json(const TrainConfig& cfg, bool include_seed) {
  json j = {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size}, {"lr", cfg.lr},
            {"weight_decay", cfg.weight_decay}, {"clip_norm", cfg.clip_norm}, {"patience", cfg.patience},
            {"min_delta", cfg.min_delta}, {"alpha", cfg.alpha},           {"beta", cfg.beta}};
  if (include_seed) j["seed"] = cfg.seed;
  return j;
}

TrainConfig train_config_from_json(const json& j, bool allow_seed) {
  const std::string s = "train";
  std::set<std::string> keys = {"epochs", "batch_size", "lr", "weight_decay", "clip_norm",
                                "patience", "min_delta", "alpha", "beta"};
  if (allow_seed) keys.insert("seed");
  reject_unknown(j, keys, s);
  TrainConfig cfg;
  read(j, "epochs", cfg.epochs, s);
  read(j, "batch_size", cfg.batch_size, s);
  read(j, "lr", cfg.lr, s);
  read(j, "weight_decay", cfg.weight_decay, s);
  read(j, "clip_norm", cfg.clip_norm, s);
  read(j, "patience", cfg.patience, s);
  read(j, "min_delta", cfg.min_delta, s);
  read(j, "alpha", cfg.alpha, s);
  read(j, "beta", cfg.beta, s);
  if (allow_seed) read(j, "seed", cfg.seed, s);
  cfg.validate();
  return cfg;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"hyperparams", "train", "data", "split", "seed"}, "<root>");
  RunConfig cfg;
  read(j, "seed", cfg.seed, "<root>");
  if (j.contains("hyperparams")) cfg.hyperparams = hyperparams_from_json(j.at("hyperparams"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), false);
  cfg.train.seed = cfg.seed;
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"csv_path", "synth"}, "data");
    if (d.contains("csv_path")) {
      std::string path;
      read(d, "csv_path", path, "data");
      cfg.data.csv_path = path;
    }
    if (d.contains("synth")) {
      const json& sy = d.at("synth");
      reject_unknown(sy, {"carriers", "days", "start"}, "data.synth");
      read(sy, "carriers", cfg.data.synth.carriers, "data.synth");
      read(sy, "days", cfg.data.synth.days, "data.synth");
      read(sy, "start", cfg.data.synth.start, "data.synth");
      parse_timestamp(cfg.data.synth.start);
    }
  }
  if (j.contains("split")) {
    const json& sp = j.at("split");
    reject_unknown(sp, {"train_days", "val_days", "test_days"}, "split");
    read(sp, "train_days", cfg.split.train_days, "split");
    read(sp, "val_days", cfg.split.val_days, "split");
    read(sp, "test_days", cfg.split.test_days, "split");
    if (!(cfg.split.train_days > 0 && cfg.split.val_days > 0 && cfg.split.test_days > 0)) {
      throw ConfigError("config: split day counts must be positive");
    }
  }
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json data = {{"synth", {{"carriers", cfg.data.synth.carriers}, {"days", cfg.data.synth.days}, {"start", cfg.data.synth.start}}}};
  if (cfg.data.csv_path) data["csv_path"] = *cfg.data.csv_path;
  return {{"hyperparams", hyperparams_to_json(cfg.hyperparams)},
          {"train", train_config_to_json(cfg.train, false)},
          {"data", data},
          {"split", {{"train_days", cfg.split.train_days}, {"val_days", cfg.split.val_days}, {"test_days", cfg.split.test_days}}},
          {"seed", cfg.seed}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace rupf
