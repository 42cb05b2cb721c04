// SPDX-License-Identifier: Apache-2.0
#include "rdpb/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rdpb/autodiff.hpp"
#include "rdpb/channel.hpp"
#include "rdpb/errors.hpp"
#include "rdpb/kernels.hpp"
#include "rdpb/rng.hpp"

namespace rdpb::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvalSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kStage2Salt = 0xc2b2ae3d27d4eb4fULL;
constexpr std::size_t kEvalChunk = 1000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t cols = x.cols();
  const auto v = x.values().subspan(begin * cols, count * cols);
  return Tensor({count, cols}, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

Adam::Adam(std::vector<Tensor> params, const OptimizerSettings& settings)
    : params_(std::move(params)), settings_(settings) {
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i].size(), 0.0);
    slots_[i].v.assign(params_[i].size(), 0.0);
  }
}

void Adam::step() {
  const double b1 = settings_.beta1;
  const double b2 = settings_.beta2;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    Slot& s = slots_[i];
    ++s.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    const auto g = p.grad_view();
    auto w = p.mutable_values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      s.m[k] = b1 * s.m[k] + (1.0 - b1) * g[k];
      s.v[k] = b2 * s.v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= settings_.lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + settings_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

const csv::Row& results_header() {
  static const csv::Row header{"rate_bits", "dim",  "L",     "sigma",          "beta",
                               "lambda",    "mu",   "P",     "seed",           "stage",
                               "epoch",     "split", "accuracy", "error_rate", "mse",
                               "perception_est", "ce", "rate_kl", "total_loss", "wall_seconds",
                               "status"};
  return header;
}

csv::Row to_row(const RunRecord& r) {
  using csv::format_number;
  return {format_number(r.rate_bits), std::to_string(r.dim),       std::to_string(r.L),
          format_number(r.sigma),     format_number(r.beta),       format_number(r.lambda),
          format_number(r.mu),        format_number(r.P),          std::to_string(r.seed),
          std::to_string(r.stage),    std::to_string(r.epoch),     r.split,
          format_number(r.accuracy),  format_number(r.error_rate), format_number(r.mse),
          format_number(r.perception_est), format_number(r.ce),    format_number(r.rate_kl),
          format_number(r.total_loss), format_number(r.wall_seconds), r.status};
}

RunRecord from_row(const csv::Row& row) {
  if (row.size() != results_header().size()) {
    throw SchemaError("expected " + std::to_string(results_header().size()) + " fields, got " +
                      std::to_string(row.size()));
  }
  auto integer = [](const std::string& s) -> std::int64_t {
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw SchemaError("not an integer: '" + s + "'");
    return v;
  };
  RunRecord r;
  r.rate_bits = csv::parse_number(row[0]);
  r.dim = integer(row[1]);
  r.L = integer(row[2]);
  r.sigma = csv::parse_number(row[3]);
  r.beta = csv::parse_number(row[4]);
  r.lambda = csv::parse_number(row[5]);
  r.mu = csv::parse_number(row[6]);
  r.P = csv::parse_number(row[7]);
  r.seed = static_cast<std::uint64_t>(integer(row[8]));
  r.stage = static_cast<int>(integer(row[9]));
  r.epoch = static_cast<int>(integer(row[10]));
  r.split = row[11];
  r.accuracy = csv::parse_number(row[12]);
  r.error_rate = csv::parse_number(row[13]);
  r.mse = csv::parse_number(row[14]);
  r.perception_est = csv::parse_number(row[15]);
  r.ce = csv::parse_number(row[16]);
  r.rate_kl = csv::parse_number(row[17]);
  r.total_loss = csv::parse_number(row[18]);
  r.wall_seconds = csv::parse_number(row[19]);
  r.status = row[20];
  return r;
}

RunRecord record_for(const RunConfig& cfg, int stage) {
  RunRecord r;
  r.rate_bits = channel::rate_bits(cfg.channel.dim, cfg.channel.levels);
  r.dim = cfg.channel.dim;
  r.L = cfg.channel.levels;
  r.sigma = cfg.channel.sigma;
  r.beta = cfg.weights.beta;
  r.lambda = cfg.weights.lambda;
  r.mu = cfg.weights.mu;
  r.P = cfg.weights.P;
  r.seed = cfg.seeds.params;
  r.stage = stage;
  return r;
}

Tensor received_features(const model::ModelParams& params, const Tensor& images,
                         const RunConfig& cfg) {
  NoGradGuard no_grad;
  Rng noise(cfg.seeds.channel ^ kEvalSalt);
  return channel::transmit(model::encode(images, params).mu, cfg.channel, noise);
}

EvalMetrics evaluate(const model::ModelParams& params, const dataset::LabeledImageSet& set,
                     const RunConfig& cfg, int stage) {
  if (set.size() == 0) throw ContractError("evaluate: empty split");
  NoGradGuard no_grad;
  Rng noise(cfg.seeds.channel ^ kEvalSalt);
  const std::size_t n = set.size();
  objective::MomentAccumulator data_moments(set.images.cols());
  objective::MomentAccumulator recon_moments(set.images.cols());
  std::size_t correct = 0;
  double ce = 0.0;
  double rate = 0.0;
  double sq = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - begin);
    const Tensor x = rows_of(set.images, begin, count);
    const std::span<const int> y(set.labels.data() + begin, count);
    const model::Encoded enc = model::encode(x, params);
    const Tensor zhat = channel::transmit(enc.mu, cfg.channel, noise);
    const Tensor log_probs = model::infer(zhat, params);
    const std::size_t classes = log_probs.cols();
    const auto lp = log_probs.values();
    for (std::size_t r = 0; r < count; ++r) {
      const double* row = lp.data() + r * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      if (best == y[r]) ++correct;
      ce -= row[y[r]];
    }
    rate += objective::rate_kl(enc.mu, enc.logvar, cfg.channel.sigma).item() *
            static_cast<double>(count);
    const Tensor xhat = model::reconstruct(zhat, params);
    const auto xv = x.values();
    const auto hv = xhat.values();
    for (std::size_t k = 0; k < xv.size(); ++k) sq += (xv[k] - hv[k]) * (xv[k] - hv[k]);
    data_moments.add(x);
    recon_moments.add(xhat);
  }
  const double nd = static_cast<double>(n);
  EvalMetrics m;
  m.accuracy = static_cast<double>(correct) / nd;
  m.ce = ce / nd;
  m.rate_kl = std::max(0.0, rate / nd);
  m.mse = sq / (nd * static_cast<double>(set.images.cols()));
  m.perception = objective::moment_kl(data_moments.finish(), recon_moments.finish());
  m.total = m.ce + cfg.weights.beta * m.rate_kl;
  if (stage == 2) {
    m.total += cfg.weights.lambda * m.mse +
               objective::gated_perception(m.perception, cfg.weights.mu, cfg.weights.P).contribution;
  }
  return m;
}

fs::path make_run_dir(const RunConfig& cfg, int stage) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream name;
  name << std::put_time(&utc, "%Y%m%dT%H%M%SZ") << '-' << config_hash(cfg) << "-s" << stage;
  fs::path dir = fs::path(cfg.output_dir) / name.str();
  for (int k = 1; fs::exists(dir); ++k) {
    dir = fs::path(cfg.output_dir) / (name.str() + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
  return dir;
}

dataset::MnistSplits prepare_splits(const RunConfig& cfg) {
  dataset::MnistSplits s = dataset::load_mnist(cfg.resolved_data_dir(), cfg.train_count);
  auto limit = [](dataset::LabeledImageSet& set, std::size_t n) {
    if (n > 0 && n < set.size()) set = set.slice(0, n);
  };
  limit(s.train, cfg.train_limit);
  limit(s.validation, cfg.eval_limit);
  limit(s.test, cfg.eval_limit);
  return s;
}

void write_results(const fs::path& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot write " + path.string());
  out << csv::format_row(results_header());
  for (const RunRecord& r : records) out << csv::format_row(to_row(r));
}

std::vector<RunRecord> read_results(const fs::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows.front() != results_header()) {
    throw SchemaError(path.string() + ": row 1: header does not match the results schema");
  }
  std::vector<RunRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    try {
      out.push_back(from_row(rows[i]));
    } catch (const Error& e) {
      throw SchemaError(path.string() + ": row " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

namespace {

RunRecord make_record(const RunConfig& cfg, int stage, int epoch, const std::string& split,
                      const EvalMetrics& m, double wall) {
  RunRecord r = record_for(cfg, stage);
  r.epoch = epoch;
  r.split = split;
  r.accuracy = m.accuracy;
  r.error_rate = 1.0 - m.accuracy;
  r.mse = m.mse;
  r.perception_est = m.perception;
  r.ce = m.ce;
  r.rate_kl = m.rate_kl;
  r.total_loss = m.total;
  r.wall_seconds = wall;
  return r;
}

void write_last_finite(const fs::path& dir, int epoch, std::size_t step,
                       const objective::LossBreakdown& last, const std::string& error) {
  json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["error"] = error;
  j["breakdown"] = {{"ce", last.ce},
                    {"rate_kl", last.rate_kl},
                    {"mse", last.mse},
                    {"perception", last.perception},
                    {"perception_gated", last.perception_gated},
                    {"total", last.total}};
  std::ofstream(dir / "last_finite.json") << j.dump(2) << '\n';
}

void log_line(const TrainHooks& hooks, const RunRecord& r) {
  if (!hooks.log) return;
  *hooks.log << "stage " << r.stage << " epoch " << r.epoch << ' ' << r.split
             << " acc=" << r.accuracy << " mse=" << r.mse << " perc=" << r.perception_est
             << " ce=" << r.ce << " rate_kl=" << r.rate_kl << " t=" << r.wall_seconds << "s\n";
  hooks.log->flush();
}

struct LoopState {
  Rng reparam;
  Rng channel;
  objective::LossBreakdown last_finite;
  double gate_average = 0.0;
  bool have_average = false;
};

// One pass over the training split. Returns the number of steps taken.
template <typename OnStep>
void run_epoch(const RunConfig& cfg, const dataset::LabeledImageSet& train, int stage,
               int epoch, const model::ModelParams& params, Adam& opt, LoopState& st,
               const fs::path& run_dir, OnStep on_step) {
  const std::uint64_t batch_seed =
      (stage == 2 ? cfg.seeds.batching ^ kStage2Salt : cfg.seeds.batching) +
      static_cast<std::uint64_t>(epoch) * 0x100000001b3ULL;
  const dataset::BatchSequence seq = dataset::batches(
      train, static_cast<std::int64_t>(cfg.batch_size), batch_seed);
  for (std::size_t b = 0; b < seq.size(); ++b) {
    const dataset::Batch batch = seq[b];
    objective::LossOptions lo;
    lo.stage = stage;
    lo.mc_samples = cfg.mc_samples;
    objective::LossResult res;
    try {
      opt.zero_grad();
      if (stage == 2 && cfg.gate == GateMode::kRunningAverage && st.have_average) {
        lo.gate_estimate = &st.gate_average;
      }
      res = objective::rdpvb_loss(batch.x, batch.y, params, cfg.channel, cfg.weights,
                                  {st.reparam, st.channel}, lo);
    } catch (const objective::NumericError& e) {
      current_record().clear();
      write_last_finite(run_dir, epoch, b, st.last_finite, e.what());
      throw;
    }
    backward(res.total);
    opt.step();
    st.last_finite = res.breakdown;
    if (stage == 2) {
      const double est = res.breakdown.perception;
      st.gate_average = st.have_average
                            ? cfg.gate_decay * st.gate_average + (1.0 - cfg.gate_decay) * est
                            : est;
      st.have_average = true;
    }
    on_step(b, res.breakdown);
  }
}

}  // namespace

StageResult train_stage1(const RunConfig& cfg, const dataset::MnistSplits& data,
                         const fs::path& run_dir, const TrainHooks& hooks) {
  cfg.validate();
  kernels::set_num_threads(cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();
  StageResult out;
  out.run_dir = run_dir;
  model::ModelParams params =
      model::init_params(cfg.seeds.params, cfg.arch, static_cast<std::size_t>(cfg.channel.dim));
  std::vector<Tensor> trainable = params.encoder_tensors();
  for (const Tensor& t : params.inference_tensors()) trainable.push_back(t);
  Adam opt(trainable, cfg.optimizer);
  LoopState st{Rng(cfg.seeds.reparam), Rng(cfg.seeds.channel), {}, 0.0, false};

  out.checkpoint = run_dir / "stage1_best.ckpt";
  auto evaluate_epoch = [&](int epoch) {
    const EvalMetrics m = evaluate(params, data.validation, cfg, 1);
    RunRecord r = make_record(cfg, 1, epoch, "validation", m, seconds_since(t0));
    log_line(hooks, r);
    out.records.push_back(r);
    return m.accuracy;
  };
  double best = evaluate_epoch(0);
  model::save_checkpoint(params, out.checkpoint);
  for (int epoch = 1; epoch <= cfg.epochs_stage1; ++epoch) {
    run_epoch(cfg, data.train, 1, epoch, params, opt, st, run_dir,
              [](std::size_t, const objective::LossBreakdown&) {});
    const double acc = evaluate_epoch(epoch);
    if (acc > best) {
      best = acc;
      out.best_epoch = epoch;
      model::save_checkpoint(params, out.checkpoint);
    }
  }
  out.params = model::load_checkpoint(out.checkpoint);
  const EvalMetrics test = evaluate(out.params, data.test, cfg, 1);
  RunRecord r = make_record(cfg, 1, out.best_epoch, "test", test, seconds_since(t0));
  log_line(hooks, r);
  out.records.push_back(r);
  write_results(run_dir / "results.csv", out.records);
  return out;
}

StageResult train_stage2(const RunConfig& cfg, const dataset::MnistSplits& data,
                         const model::ModelParams& init, const fs::path& run_dir,
                         const TrainHooks& hooks) {
  cfg.validate();
  if (init.dim != static_cast<std::size_t>(cfg.channel.dim) || !(init.arch == cfg.arch)) {
    throw ContractError("train_stage2: checkpoint architecture does not match the config");
  }
  kernels::set_num_threads(cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();
  StageResult out;
  out.run_dir = run_dir;
  out.params = init.clone();
  for (Tensor& t : out.params.all_tensors()) t.set_requires_grad(true);
  Adam opt(out.params.all_tensors(), cfg.optimizer);
  LoopState st{Rng(cfg.seeds.reparam ^ kStage2Salt), Rng(cfg.seeds.channel ^ kStage2Salt), {},
               0.0, false};

  std::ofstream gate_log(run_dir / "gate_log.csv", std::ios::binary);
  gate_log << csv::format_row({"epoch", "step", "perception_est", "gate_estimate", "gated"});
  std::optional<bool> gated;
  std::size_t global_step = 0;

  auto evaluate_epoch = [&](int epoch) {
    const EvalMetrics m = evaluate(out.params, data.validation, cfg, 2);
    RunRecord r = make_record(cfg, 2, epoch, "validation", m, seconds_since(t0));
    log_line(hooks, r);
    out.records.push_back(r);
  };
  evaluate_epoch(0);
  for (int epoch = 1; epoch <= cfg.epochs_stage2; ++epoch) {
    run_epoch(cfg, data.train, 2, epoch, out.params, opt, st, run_dir,
              [&](std::size_t, const objective::LossBreakdown& b) {
                ++global_step;
                if (gated && *gated == b.perception_gated) return;
                gated = b.perception_gated;
                gate_log << csv::format_row(
                    {std::to_string(epoch), std::to_string(global_step),
                     csv::format_number(b.perception),
                     csv::format_number(cfg.gate == GateMode::kRunningAverage ? st.gate_average
                                                                               : b.perception),
                     b.perception_gated ? "true" : "false"});
              });
    evaluate_epoch(epoch);
  }
  out.best_epoch = cfg.epochs_stage2;
  out.checkpoint = run_dir / "stage2_final.ckpt";
  model::save_checkpoint(out.params, out.checkpoint);
  const EvalMetrics test = evaluate(out.params, data.test, cfg, 2);
  RunRecord r = make_record(cfg, 2, cfg.epochs_stage2, "test", test, seconds_since(t0));
  log_line(hooks, r);
  out.records.push_back(r);
  write_results(run_dir / "results.csv", out.records);
  return out;
}

}  // namespace rdpb::train
