// SPDX-License-Identifier: Apache-2.0
// Command-line front end: dataset, train, sweep, oracle, tsne, report.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "rdpb/autodiff.hpp"
#include "rdpb/config.hpp"
#include "rdpb/csv.hpp"
#include "rdpb/dataset.hpp"
#include "rdpb/errors.hpp"
#include "rdpb/fetch.hpp"
#include "rdpb/model.hpp"
#include "rdpb/oracle.hpp"
#include "rdpb/report.hpp"
#include "rdpb/sweep.hpp"
#include "rdpb/train.hpp"
#include "rdpb/tsne.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rdpb;

namespace {

struct Overrides {
  std::optional<std::string> data_dir, output_dir, P, checkpoint;
  std::optional<std::int64_t> dim, L;
  std::optional<double> sigma, clip, beta, lambda, mu, lr;
  std::optional<int> epochs, threads, mc_samples;
  std::optional<std::size_t> batch_size, train_limit, eval_limit;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--data-dir", data_dir, "MNIST directory (else $RDPB_DATA_DIR)");
    app->add_option("--output-dir", output_dir);
    app->add_option("--dim", dim);
    app->add_option("--L", L, "quantizer levels");
    app->add_option("--sigma", sigma, "channel noise std");
    app->add_option("--clip", clip);
    app->add_option("--beta", beta);
    app->add_option("--lambda", lambda);
    app->add_option("--mu", mu);
    app->add_option("--P", P, "perception threshold: number, inf or best");
    app->add_option("--lr", lr);
    app->add_option("--epochs", epochs, "epochs for the selected stage");
    app->add_option("--batch-size", batch_size);
    app->add_option("--threads", threads);
    app->add_option("--mc-samples", mc_samples);
    app->add_option("--train-limit", train_limit);
    app->add_option("--eval-limit", eval_limit);
    app->add_option("--seed", seed, "base seed for all four streams");
  }

  void apply(RunConfig& c, int stage) const {
    if (data_dir) c.data_dir = *data_dir;
    if (output_dir) c.output_dir = *output_dir;
    if (dim) c.channel.dim = *dim;
    if (L) c.channel.levels = *L;
    if (sigma) c.channel.sigma = *sigma;
    if (clip) c.channel.clip = *clip;
    if (beta) c.weights.beta = *beta;
    if (lambda) c.weights.lambda = *lambda;
    if (mu) c.weights.mu = *mu;
    if (P) c.weights.P = parse_threshold(json(*P));
    if (lr) c.optimizer.lr = *lr;
    if (epochs) (stage == 1 ? c.epochs_stage1 : c.epochs_stage2) = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (threads) c.threads = *threads;
    if (mc_samples) c.mc_samples = *mc_samples;
    if (train_limit) c.train_limit = *train_limit;
    if (eval_limit) c.eval_limit = *eval_limit;
    if (seed) c.seeds = Seeds::from_base(*seed);
    c.validate();
  }
};

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

json histogram_json(const dataset::LabeledImageSet& s) {
  const auto h = s.label_histogram();
  return {{"count", s.size()}, {"label_histogram", std::vector<std::size_t>(h.begin(), h.end())}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rate-distortion-perception bottleneck experiments on MNIST"};
  app.require_subcommand(1);

  // dataset
  auto* ds = app.add_subcommand("dataset", "Download or inspect MNIST");
  ds->require_subcommand(1);
  std::string ds_dir;
  std::string mirror = dataset::kDefaultMnistMirror;
  std::size_t train_count = 50000;
  auto* ds_fetch = ds->add_subcommand("fetch", "Download and verify the IDX files");
  ds_fetch->add_option("--dir", ds_dir);
  ds_fetch->add_option("--mirror", mirror);
  auto* ds_inspect = ds->add_subcommand("inspect", "Print split sizes and label histograms");
  ds_inspect->add_option("--dir", ds_dir);
  ds_inspect->add_option("--train-count", train_count);

  // train
  auto* tr = app.add_subcommand("train", "Train one stage");
  std::string config_path;
  int stage = 1;
  std::string checkpoint;
  Overrides ov;
  tr->add_option("--config", config_path, "JSON run config");
  tr->add_option("--stage", stage)->check(CLI::IsMember({1, 2}));
  tr->add_option("--checkpoint", checkpoint, "stage-1 checkpoint for stage 2");
  ov.attach(tr);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid sweep into a single results.csv");
  std::string sweep_path;
  std::string sweep_out;
  std::optional<int> sweep_jobs;
  sw->add_option("--config", sweep_path)->required();
  sw->add_option("--out", sweep_out, "sweep directory (default <base.output_dir>/sweep-<hash>)");
  sw->add_option("--jobs", sweep_jobs);

  // oracle
  auto* orc = app.add_subcommand("oracle", "Exact discrete checks");
  orc->require_subcommand(1);
  auto* orc_verify = orc->add_subcommand("verify", "Bound gap and identity on random systems");
  std::size_t instances = 1000;
  std::uint64_t oracle_seed = 0;
  objective::RDPBWeights ow{0.5, 1.0, 1.0, 0.1};
  orc_verify->add_option("--instances", instances);
  orc_verify->add_option("--seed", oracle_seed);
  orc_verify->add_option("--beta", ow.beta);

  // tsne
  auto* ts = app.add_subcommand("tsne", "2-D embedding of received features");
  std::string ts_ckpt;
  std::string ts_split = "test";
  std::size_t ts_n = 1000;
  std::string ts_out;
  std::string ts_config;
  std::string ts_features = "received";
  tsne::Options topt;
  ts->add_option("--checkpoint", ts_ckpt)->required();
  ts->add_option("--split", ts_split)->check(CLI::IsMember({"train", "validation", "test"}));
  ts->add_option("--n", ts_n);
  ts->add_option("--config", ts_config, "default: config.json next to the checkpoint");
  ts->add_option("--features", ts_features)->check(CLI::IsMember({"received", "mean"}));
  ts->add_option("--perplexity", topt.perplexity);
  ts->add_option("--iterations", topt.iterations);
  ts->add_option("--seed", topt.seed);
  ts->add_option("--out", ts_out, "directory for embedding.csv (default: checkpoint directory)");

  // report
  auto* rp = app.add_subcommand("report", "Panel CSVs and summary for a run or sweep directory");
  std::string rp_dir;
  std::optional<double> band_lo, band_hi;
  rp->add_option("run_dir", rp_dir)->required();
  rp->add_option("--band-lo", band_lo);
  rp->add_option("--band-hi", band_hi);

  CLI11_PARSE(app, argc, argv);

  try {
    if (ds->parsed()) {
      const fs::path dir = ds_dir.empty() ? RunConfig{}.resolved_data_dir() : fs::path(ds_dir);
      if (ds_fetch->parsed()) {
        json out = json::array();
        for (const auto& p : dataset::fetch_mnist(dir, mirror)) {
          out.push_back({{"file", p.string()}, {"sha256", dataset::sha256_file(p)}});
        }
        std::cout << out.dump(2) << '\n';
      } else {
        const auto s = dataset::load_mnist(dir, train_count);
        std::cout << json{{"train", histogram_json(s.train)},
                          {"validation", histogram_json(s.validation)},
                          {"test", histogram_json(s.test)}}
                         .dump(2)
                  << '\n';
      }
    } else if (tr->parsed()) {
      RunConfig cfg = config_or_default(config_path);
      ov.apply(cfg, stage);
      if (!checkpoint.empty()) cfg.stage1_checkpoint = checkpoint;
      const auto data = train::prepare_splits(cfg);
      const fs::path dir = train::make_run_dir(cfg, stage);
      const train::TrainHooks hooks{&std::cerr};
      train::StageResult res;
      if (stage == 1) {
        res = train::train_stage1(cfg, data, dir, hooks);
      } else {
        if (cfg.stage1_checkpoint.empty()) throw ContractError("stage 2 needs --checkpoint");
        res = train::train_stage2(cfg, data, model::load_checkpoint(cfg.stage1_checkpoint), dir, hooks);
      }
      const auto& test = res.records.back();
      std::cout << json{{"run_dir", dir.string()},
                        {"checkpoint", res.checkpoint.string()},
                        {"test_accuracy", test.accuracy},
                        {"test_mse", test.mse},
                        {"test_perception", test.perception_est}}
                       .dump(2)
                << '\n';
    } else if (sw->parsed()) {
      auto sc = sweep::load_sweep_config(sweep_path);
      if (sweep_jobs) sc.jobs = *sweep_jobs;
      const fs::path dir = sweep_out.empty()
                               ? fs::path(sc.base.output_dir) / ("sweep-" + config_hash(sc.base))
                               : fs::path(sweep_out);
      const auto data = train::prepare_splits(sc.base);
      const auto summary = sweep::run_sweep(sc, data, dir, {&std::cerr});
      std::cout << json{{"dir", summary.dir.string()},
                        {"results", summary.results.string()},
                        {"cells", summary.cells},
                        {"failed", summary.failed}}
                       .dump(2)
                << '\n';
      return summary.failed == 0 ? 0 : 3;
    } else if (orc->parsed()) {
      const auto v = oracle::verify(instances, oracle_seed, ow);
      std::cout << json{{"instances", v.instances},
                        {"min_gap", v.min_gap},
                        {"max_negative_gap", v.max_negative_gap},
                        {"max_identity_residual", v.max_identity_residual},
                        {"max_dpi_violation", v.max_dpi_violation},
                        {"infinite_instances", v.infinite_instances}}
                       .dump(2)
                << '\n';
    } else if (ts->parsed()) {
      const fs::path ckpt(ts_ckpt);
      fs::path cfg_path = ts_config.empty() ? ckpt.parent_path() / "config.json" : fs::path(ts_config);
      const RunConfig cfg = fs::exists(cfg_path) ? load_run_config(cfg_path) : RunConfig{};
      const auto params = model::load_checkpoint(ckpt);
      const auto data = dataset::load_mnist(cfg.resolved_data_dir(), cfg.train_count);
      const auto split = dataset::parse_split(ts_split);
      const auto& set = split == dataset::Split::kTrain        ? data.train
                        : split == dataset::Split::kValidation ? data.validation
                                                               : data.test;
      const auto sub = set.slice(0, std::min(ts_n, set.size()));
      Tensor features;
      if (ts_features == "mean") {
        NoGradGuard no_grad;
        features = model::encode(sub.images, params).mu;
      } else {
        features = train::received_features(params, sub.images, cfg);
      }
      const auto emb = tsne::tsne_embed(features, topt);
      const fs::path out_dir = ts_out.empty() ? ckpt.parent_path() : fs::path(ts_out);
      fs::create_directories(out_dir);
      std::ofstream out(out_dir / "embedding.csv", std::ios::binary);
      out << csv::format_row({"x", "y", "label"});
      for (std::size_t i = 0; i < sub.size(); ++i) {
        out << csv::format_row({csv::format_number(emb.coords.at(i, 0)),
                                csv::format_number(emb.coords.at(i, 1)),
                                std::to_string(sub.labels[i])});
      }
      std::cout << json{{"embedding", (out_dir / "embedding.csv").string()},
                        {"n", sub.size()},
                        {"kl_initial", emb.kl_trace.front()},
                        {"kl_final", emb.kl_trace.back()}}
                       .dump(2)
                << '\n';
    } else if (rp->parsed()) {
      report::ReportOptions ro;
      ro.band_lo = band_lo;
      ro.band_hi = band_hi;
      const auto r = report::emit_report(rp_dir, ro);
      std::cout << json{{"report_dir", r.dir.string()},
                        {"rows_used", r.rows_used},
                        {"stage", r.stage},
                        {"distortion_band", {r.band_lo, r.band_hi}}}
                       .dump(2)
                << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
