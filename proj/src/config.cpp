// SPDX-License-Identifier: Apache-2.0
#include "rdpb/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "rdpb/errors.hpp"
#include "rdpb/fetch.hpp"

namespace rdpb {

using nlohmann::json;

Seeds Seeds::from_base(std::uint64_t s) { return {s, s + 1000, s + 2000, s + 3000}; }

void RunConfig::validate() const {
  channel.validate();
  weights.validate();
  if (batch_size == 0) throw ContractError("config: batch_size must be positive");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ContractError("config: epochs must be >= 0");
  if (precision != "f64") {
    throw ContractError("config: precision '" + precision + "' is not supported (use f64)");
  }
  if (threads < 1) throw ContractError("config: threads must be >= 1");
  if (mc_samples < 1) throw ContractError("config: mc_samples must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ContractError("config: optimizer.lr must be positive");
  if (!(gate_decay >= 0.0 && gate_decay < 1.0)) throw ContractError("config: gate_decay must be in [0, 1)");
}

std::filesystem::path RunConfig::resolved_data_dir() const {
  if (!data_dir.empty()) return data_dir;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  return "data/mnist";
}

double parse_threshold(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "shannon") return objective::kInfinity;
    if (s == "best") return 0.0;
    try {
      return std::stod(s);
    } catch (const std::exception&) {
    }
  }
  throw ContractError("config: P must be a number, \"inf\" or \"best\"");
}

json threshold_json(double P) {
  if (std::isinf(P)) return "inf";
  return P;
}

namespace {

const char* gate_name(GateMode g) { return g == GateMode::kBatch ? "batch" : "ema"; }

GateMode parse_gate(const std::string& s) {
  if (s == "batch") return GateMode::kBatch;
  if (s == "ema") return GateMode::kRunningAverage;
  throw ContractError("config: gate must be \"batch\" or \"ema\"");
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ContractError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"root", c.data_dir},
                  {"train_count", c.train_count},
                  {"train_limit", c.train_limit},
                  {"eval_limit", c.eval_limit}};
  j["channel"] = {{"dim", c.channel.dim},
                  {"L", c.channel.levels},
                  {"clip", c.channel.clip},
                  {"sigma", c.channel.sigma}};
  j["weights"] = {{"beta", c.weights.beta},
                  {"lambda", c.weights.lambda},
                  {"mu", c.weights.mu},
                  {"P", threshold_json(c.weights.P)}};
  j["arch"] = {{"input", c.arch.input},
               {"classes", c.arch.classes},
               {"encoder_hidden", c.arch.encoder_hidden},
               {"inference_hidden", c.arch.inference_hidden},
               {"reconstruction_hidden", c.arch.reconstruction_hidden}};
  j["optimizer"] = {{"algorithm", "adam"},
                    {"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["batch_size"] = c.batch_size;
  j["epochs_stage1"] = c.epochs_stage1;
  j["epochs_stage2"] = c.epochs_stage2;
  j["seeds"] = {{"params", c.seeds.params},
                {"batching", c.seeds.batching},
                {"channel", c.seeds.channel},
                {"reparam", c.seeds.reparam}};
  j["precision"] = c.precision;
  j["threads"] = c.threads;
  j["mc_samples"] = c.mc_samples;
  j["gate"] = gate_name(c.gate);
  j["gate_decay"] = c.gate_decay;
  j["output_dir"] = c.output_dir;
  j["stage1_checkpoint"] = c.stage1_checkpoint;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("config: top level must be an object");
  reject_unknown(j,
                 {"dataset", "channel", "weights", "arch", "optimizer", "batch_size",
                  "epochs_stage1", "epochs_stage2", "seeds", "precision", "threads",
                  "mc_samples", "gate", "gate_decay", "output_dir", "stage1_checkpoint"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      reject_unknown(d, {"root", "train_count", "train_limit", "eval_limit"}, "dataset");
      read(d, "root", c.data_dir);
      read(d, "train_count", c.train_count);
      read(d, "train_limit", c.train_limit);
      read(d, "eval_limit", c.eval_limit);
    }
    if (j.contains("channel")) {
      const auto& d = j["channel"];
      reject_unknown(d, {"dim", "L", "clip", "sigma"}, "channel");
      read(d, "dim", c.channel.dim);
      read(d, "L", c.channel.levels);
      read(d, "clip", c.channel.clip);
      read(d, "sigma", c.channel.sigma);
    }
    if (j.contains("weights")) {
      const auto& d = j["weights"];
      reject_unknown(d, {"beta", "lambda", "mu", "P"}, "weights");
      read(d, "beta", c.weights.beta);
      read(d, "lambda", c.weights.lambda);
      read(d, "mu", c.weights.mu);
      if (d.contains("P")) c.weights.P = parse_threshold(d["P"]);
    }
    if (j.contains("arch")) {
      const auto& d = j["arch"];
      reject_unknown(d, {"input", "classes", "encoder_hidden", "inference_hidden",
                         "reconstruction_hidden"},
                     "arch");
      read(d, "input", c.arch.input);
      read(d, "classes", c.arch.classes);
      read(d, "encoder_hidden", c.arch.encoder_hidden);
      read(d, "inference_hidden", c.arch.inference_hidden);
      read(d, "reconstruction_hidden", c.arch.reconstruction_hidden);
    }
    if (j.contains("optimizer")) {
      const auto& d = j["optimizer"];
      reject_unknown(d, {"algorithm", "lr", "beta1", "beta2", "eps"}, "optimizer");
      if (d.contains("algorithm") && d["algorithm"] != "adam") {
        throw ContractError("config: only the adam optimizer is available");
      }
      read(d, "lr", c.optimizer.lr);
      read(d, "beta1", c.optimizer.beta1);
      read(d, "beta2", c.optimizer.beta2);
      read(d, "eps", c.optimizer.eps);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "epochs_stage1", c.epochs_stage1);
    read(j, "epochs_stage2", c.epochs_stage2);
    if (j.contains("seeds")) {
      const auto& d = j["seeds"];
      if (d.is_number_unsigned()) {
        c.seeds = Seeds::from_base(d.get<std::uint64_t>());
      } else {
        reject_unknown(d, {"params", "batching", "channel", "reparam"}, "seeds");
        read(d, "params", c.seeds.params);
        read(d, "batching", c.seeds.batching);
        read(d, "channel", c.seeds.channel);
        read(d, "reparam", c.seeds.reparam);
      }
    }
    read(j, "precision", c.precision);
    read(j, "threads", c.threads);
    read(j, "mc_samples", c.mc_samples);
    if (j.contains("gate")) c.gate = parse_gate(j["gate"].get<std::string>());
    read(j, "gate_decay", c.gate_decay);
    read(j, "output_dir", c.output_dir);
    read(j, "stage1_checkpoint", c.stage1_checkpoint);
  } catch (const json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  return dataset::sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()})
      .substr(0, 10);
}

}  // namespace rdpb
