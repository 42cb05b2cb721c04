#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "rdpb/autodiff.hpp"
#include "rdpb/config.hpp"
#include "rdpb/csv.hpp"
#include "rdpb/errors.hpp"
#include "rdpb/report.hpp"
#include "rdpb/sweep.hpp"
#include "rdpb/train.hpp"
#include "support.hpp"

using namespace rdpb;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Tiny network and data so a full two-stage run takes well under a second.
RunConfig tiny_config(const fs::path& data, const fs::path& out) {
  RunConfig c;
  c.data_dir = data.string();
  c.train_count = 400;
  c.arch = {784, 10, {32}, {16}, {16}};
  c.channel = {4, 4, 2.5, 0.1};
  c.batch_size = 32;
  c.epochs_stage1 = 3;
  c.epochs_stage2 = 2;
  c.optimizer.lr = 5e-3;
  c.output_dir = out.string();
  c.weights.mu = 0.01;
  c.weights.P = 0.0;
  return c;
}

// Metric columns only: everything but wall_seconds.
std::vector<csv::Row> metric_rows(const fs::path& results) {
  auto rows = csv::read_file(results);
  for (auto& r : rows) r.erase(r.begin() + 19);
  return rows;
}

}  // namespace

TEST_CASE("csv quoting round trip") {
  const csv::Row row{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
  const std::string text = csv::format_row(row);
  CHECK(text == "plain,\"with,comma\",\"with \"\"quote\"\"\",\"multi\nline\",\r\n");
  const auto parsed = csv::parse(text + text);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == row);
  CHECK(csv::parse("a,b\nc,d\n") == std::vector<csv::Row>{{"a", "b"}, {"c", "d"}});
  CHECK_THROWS_AS(csv::parse("a,\"open\n"), SchemaError);
}

TEST_CASE("csv numbers") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456789.123456789, M_PI}) {
    CHECK(csv::parse_number(csv::format_number(v)) == v);
  }
  CHECK(csv::format_number(INFINITY) == "inf");
  CHECK(std::isinf(csv::parse_number("inf")));
  CHECK(std::isnan(csv::parse_number("nan")));
  CHECK_THROWS_AS(csv::parse_number("1.5x"), SchemaError);
  CHECK_THROWS_AS(csv::parse_number(""), SchemaError);
}

TEST_CASE("run config JSON") {
  RunConfig c;
  c.channel = {2, 2, 1.5, 0.2};
  c.weights = {0.01, 2.0, 0.5, objective::kInfinity};
  c.seeds = Seeds::from_base(7);
  c.gate = GateMode::kRunningAverage;
  const json j = to_json(c);
  CHECK(j["weights"]["P"] == "inf");
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.seeds.reparam == 3007);

  SUBCASE("P spellings") {
    CHECK(parse_threshold(json(0.06)) == 0.06);
    CHECK(std::isinf(parse_threshold(json("inf"))));
    CHECK(parse_threshold(json("best")) == 0.0);
    CHECK_THROWS_AS(parse_threshold(json("soon")), ContractError);
  }
  SUBCASE("unknown keys and bad values") {
    CHECK_THROWS_AS(run_config_from_json(json{{"chanel", json::object()}}), ContractError);
    CHECK_THROWS_AS(run_config_from_json(json{{"channel", {{"levels", 4}}}}), ContractError);
    CHECK_THROWS_AS(run_config_from_json(json{{"channel", {{"L", 1}}}}), ContractError);
    CHECK_THROWS_AS(run_config_from_json(json{{"precision", "f32"}}), ContractError);
    CHECK_THROWS_AS(run_config_from_json(json{{"batch_size", "large"}}), ContractError);
    CHECK_THROWS_AS(run_config_from_json(json{{"optimizer", {{"algorithm", "sgd"}}}}), ContractError);
  }
  SUBCASE("partial file keeps defaults") {
    const RunConfig p = run_config_from_json(json{{"weights", {{"P", 0.09}}}});
    CHECK(p.weights.P == 0.09);
    CHECK(p.channel.dim == 8);
    CHECK(p.batch_size == 128);
    CHECK(p.optimizer.lr == 1e-3);
  }
  SUBCASE("data directory falls back to the environment") {
    RunConfig e;
    setenv(kDataDirEnv, "/somewhere", 1);
    CHECK(e.resolved_data_dir() == "/somewhere");
    e.data_dir = "/explicit";
    CHECK(e.resolved_data_dir() == "/explicit");
  }
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"default.json", "r2_reference.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_run_config(fs::path(RDPB_SOURCE_DIR) / "configs" / name));
  }
  CHECK_NOTHROW(sweep::load_sweep_config(fs::path(RDPB_SOURCE_DIR) / "configs" / "sweep_tradeoff.json"));
}

TEST_CASE("Adam step matches the update rule") {
  const Tensor w({2}, {1.0, -2.0}, true);
  train::Adam opt({w}, {0.1, 0.9, 0.999, 1e-8});
  backward(sum(square(w)));  // grad = 2w
  opt.step();
  // First step: m/(1-b1) = g, v/(1-b2) = g^2, so the step is lr * sign(g).
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(w.at(1) == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  const double after_first = w.at(0);
  opt.zero_grad();
  CHECK_FALSE(w.has_grad());
  opt.step();  // no gradient: untouched
  CHECK(w.at(0) == after_first);
}

TEST_CASE("results schema") {
  CHECK(train::results_header().size() == 21);
  CHECK(train::results_header().front() == "rate_bits");
  CHECK(train::results_header().back() == "status");
  train::RunRecord r = train::record_for(RunConfig{}, 2);
  r.split = "test";
  r.accuracy = 0.75;
  r.error_rate = 0.25;
  r.P = objective::kInfinity;
  const auto back = train::from_row(train::to_row(r));
  CHECK(train::to_row(back) == train::to_row(r));
  CHECK(back.rate_bits == 16.0);
  auto bad = train::to_row(r);
  bad[1] = "eight";
  CHECK_THROWS_AS(train::from_row(bad), SchemaError);
  bad.pop_back();
  CHECK_THROWS_AS(train::from_row(bad), SchemaError);
}

TEST_CASE("two-stage training on a synthetic set") {
  test::TempDir tmp;
  const auto data_dir = test::write_synthetic_mnist(tmp.path() / "data", 500, 200);
  RunConfig cfg = tiny_config(data_dir, tmp.path() / "runs");
  const auto data = train::prepare_splits(cfg);
  CHECK(data.train.size() == 400);
  CHECK(data.validation.size() == 100);

  const fs::path dir1 = train::make_run_dir(cfg, 1);
  CHECK(fs::exists(dir1 / "config.json"));
  CHECK(run_config_from_json(json::parse(slurp(dir1 / "config.json"))).output_dir == cfg.output_dir);
  const auto s1 = train::train_stage1(cfg, data, dir1);
  REQUIRE(s1.records.size() == 5);  // epochs 0..3 on validation, then test
  CHECK(s1.records[0].epoch == 0);
  CHECK(s1.records.back().split == "test");
  CHECK(s1.records.back().accuracy > 0.5);
  for (const auto& r : s1.records) {
    CHECK(std::abs(r.error_rate + r.accuracy - 1.0) <= 1e-12);
    for (double v : {r.mse, r.perception_est, r.ce, r.rate_kl, r.total_loss}) CHECK(std::isfinite(v));
    CHECK(r.total_loss == doctest::Approx(r.ce + cfg.weights.beta * r.rate_kl).epsilon(1e-12));
  }
  CHECK(fs::exists(s1.checkpoint));
  // The reported test row comes from the best validation epoch.
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < s1.records.size(); ++i) best = std::max(best, s1.records[i].accuracy);
  CHECK(s1.records[s1.best_epoch].accuracy == best);

  const fs::path dir2 = train::make_run_dir(cfg, 2);
  CHECK(dir2 != dir1);
  const auto s2 = train::train_stage2(cfg, data, model::load_checkpoint(s1.checkpoint), dir2);
  CHECK(s2.records.size() == 4);
  CHECK(s2.records.back().stage == 2);
  CHECK(s2.records.back().mse < s1.records.back().mse);
  const auto gate = csv::read_file(dir2 / "gate_log.csv");
  REQUIRE(gate.size() >= 2);
  CHECK(gate[1][4] == "false");  // P = 0 keeps the term on

  SUBCASE("rerun from the snapshot reproduces every metric") {
    const RunConfig snap = load_run_config(dir1 / "config.json");
    const fs::path again = train::make_run_dir(snap, 1);
    train::train_stage1(snap, train::prepare_splits(snap), again);
    CHECK(metric_rows(again / "results.csv") == metric_rows(dir1 / "results.csv"));
  }
  SUBCASE("zero epochs is chance level") {
    RunConfig z = cfg;
    z.epochs_stage1 = 0;
    const auto r = train::train_stage1(z, data, train::make_run_dir(z, 1));
    CHECK(r.records.size() == 2);
    CHECK(std::abs(r.records.back().accuracy - 0.1) < 0.1);
  }
  SUBCASE("mu = 0 still reports perception") {
    RunConfig m = cfg;
    m.weights.mu = 0.0;
    const auto r = train::train_stage2(m, data, s1.params, train::make_run_dir(m, 2));
    const auto& t = r.records.back();
    CHECK(t.perception_est > 0.0);
    CHECK(t.total_loss ==
          doctest::Approx(t.ce + m.weights.beta * t.rate_kl + m.weights.lambda * t.mse).epsilon(1e-12));
  }
  SUBCASE("stage 2 rejects a checkpoint of another shape") {
    RunConfig other = cfg;
    other.channel.dim = 5;
    CHECK_THROWS_AS(train::train_stage2(other, data, s1.params, train::make_run_dir(other, 2)),
                    ContractError);
  }
}

TEST_CASE("non-finite loss persists the last finite breakdown") {
  test::TempDir tmp;
  const auto data_dir = test::write_synthetic_mnist(tmp.path() / "data", 500, 100);
  RunConfig cfg = tiny_config(data_dir, tmp.path() / "runs");
  cfg.optimizer.lr = 1e200;  // overflows within a few steps
  cfg.epochs_stage1 = 3;
  const auto data = train::prepare_splits(cfg);
  const fs::path dir = train::make_run_dir(cfg, 1);
  CHECK_THROWS_AS(train::train_stage1(cfg, data, dir), objective::NumericError);
  REQUIRE(fs::exists(dir / "last_finite.json"));
  const json j = json::parse(slurp(dir / "last_finite.json"));
  CHECK(j.contains("breakdown"));
  CHECK(j["step"].get<int>() >= 0);
}

TEST_CASE("sweep") {
  test::TempDir tmp;
  const auto data_dir = test::write_synthetic_mnist(tmp.path() / "data", 500, 100);
  sweep::SweepConfig sc;
  sc.base = tiny_config(data_dir, tmp.path() / "runs");
  sc.base.epochs_stage1 = 1;
  const auto data = train::prepare_splits(sc.base);

  SUBCASE("1x1 grid") {
    const auto s = sweep::run_sweep(sc, data, tmp.path() / "one");
    CHECK(s.cells == 1);
    CHECK(s.failed == 0);
    const auto rows = csv::read_file(s.results);
    CHECK(rows.front() == train::results_header());
    CHECK(rows.size() >= 2);
  }
  SUBCASE("cartesian order, shared stage 1, deterministic rerun") {
    sc.grid.L = {2, 4};
    sc.grid.P = {objective::kInfinity, 0.0};
    const auto cells = sweep::expand(sc);
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].channel.levels == 2);
    CHECK(std::isinf(cells[0].weights.P));
    CHECK(cells[1].weights.P == 0.0);
    CHECK(cells[2].channel.levels == 4);
    const auto a = sweep::run_sweep(sc, data, tmp.path() / "a");
    sc.jobs = 2;
    const auto b = sweep::run_sweep(sc, data, tmp.path() / "b");
    CHECK(metric_rows(a.results) == metric_rows(b.results));
    std::size_t stage1_runs = 0;
    for (const auto& e : fs::directory_iterator(tmp.path() / "a" / "runs"))
      stage1_runs += e.path().string().ends_with("-s1");
    CHECK(stage1_runs == 2);
  }
  SUBCASE("failed cells are recorded and the sweep continues") {
    sc.grid.dim = {4, 3};
    sc.base.batch_size = 1000;  // larger than the training split: stage 1 fails
    sc.grid.L = {2};
    const auto s = sweep::run_sweep(sc, data, tmp.path() / "fail");
    CHECK(s.failed == 2);
    const auto recs = train::read_results(s.results);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].status.starts_with("failed"));
    CHECK(recs[1].dim == 3);
  }
  SUBCASE("sweep config parsing") {
    const json j{{"base", {{"epochs_stage1", 3}}},
                 {"grid", {{"dim", {2, 8}}, {"P", {"inf", 0.06, "best"}}, {"seeds", {1, 2, 3}}}},
                 {"jobs", 2}};
    const auto parsed = sweep::sweep_config_from_json(j);
    CHECK(parsed.grid.P.size() == 3);
    CHECK(parsed.grid.P[2] == 0.0);
    CHECK(sweep::expand(parsed).size() == 18);
    CHECK(sweep::expand(parsed)[0].seeds.batching == 1001);
    CHECK_THROWS_AS(sweep::sweep_config_from_json(json{{"grid", {{"dim", json::array()}}}}), ContractError);
    CHECK_THROWS_AS(sweep::sweep_config_from_json(json{{"grid", {{"depth", {1}}}}}), ContractError);
  }
}

TEST_CASE("report") {
  test::TempDir tmp;
  SUBCASE("empty results give header-only panels") {
    train::write_results(tmp.path() / "results.csv", {});
    const auto r = report::emit_report(tmp.path());
    CHECK(r.rows_used == 0);
    for (const char* f : {"panel_distortion_perception.csv", "panel_perception_rate.csv",
                          "panel_error_mse.csv", "panel_embedding.csv"}) {
      CHECK(csv::read_file(r.dir / f).size() == 1);
    }
    CHECK(json::parse(slurp(r.dir / "summary.json"))["best_accuracy"].is_null());
  }
  SUBCASE("P = inf is drawn at 0.15, source untouched") {
    train::RunRecord rec = train::record_for(RunConfig{}, 2);
    rec.split = "test";
    rec.perception_est = 3.25;
    rec.mse = 0.02;
    rec.accuracy = 0.9;
    rec.error_rate = 0.1;
    train::write_results(tmp.path() / "results.csv", {rec});
    const std::string before = slurp(tmp.path() / "results.csv");
    const auto r = report::emit_report(tmp.path());
    const auto panel = csv::read_file(r.dir / "panel_distortion_perception.csv");
    REQUIRE(panel.size() == 2);
    CHECK(panel[1][7] == "inf");
    CHECK(panel[1][10] == "3.25");
    CHECK(panel[1][11] == "0.15");
    CHECK(slurp(tmp.path() / "results.csv") == before);
  }
  SUBCASE("malformed row names the row") {
    std::ofstream(tmp.path() / "results.csv", std::ios::binary)
        << csv::format_row(train::results_header()) << "16,8,4\r\n";
    try {
      report::emit_report(tmp.path());
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
  }
  SUBCASE("golden fixture") {
    const fs::path fixture = fs::path(RDPB_SOURCE_DIR) / "tests" / "data" / "report";
    fs::copy_file(fixture / "results.csv", tmp.path() / "results.csv");
    fs::copy_file(fixture / "embedding.csv", tmp.path() / "embedding.csv");
    const auto r = report::emit_report(tmp.path());
    for (const char* f : {"panel_distortion_perception.csv", "panel_perception_rate.csv",
                          "panel_error_mse.csv", "panel_embedding.csv", "summary.json"}) {
      CAPTURE(f);
      CHECK(slurp(r.dir / f) == slurp(fixture / "expected" / f));
    }
  }
  SUBCASE("missing results.csv") {
    CHECK_THROWS_AS(report::emit_report(tmp.path() / "nowhere"), PathError);
  }
}
