#include <doctest.h>

#include <cmath>

#include "rdpb/errors.hpp"
#include "rdpb/oracle.hpp"
#include "oracles.hpp"

using namespace rdpb;
using namespace rdpb::oracle;

namespace {

Table identity(std::size_t n) {
  Table t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

// X = Y uniform binary, encoder and decoder the identity.
DiscreteSystem binary_identity() {
  DiscreteSystem s;
  s.p_xy = Table(2, 2, {0.5, 0.0, 0.0, 0.5});
  s.enc = identity(2);
  s.dec_x = identity(2);
  s.embed = Table(2, 1, {0.0, 1.0});
  return s;
}

}  // namespace

TEST_CASE("mutual_info") {
  CHECK(mutual_info(Table(2, 3, {0.1, 0.2, 0.1, 0.15, 0.3, 0.15})) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(mutual_info(Table(2, 2, {0.5, 0.0, 0.0, 0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const Table j(2, 2, {0.4, 0.1, 0.1, 0.4});
  const double direct = 0.8 * std::log(0.4 / 0.25) + 0.2 * std::log(0.1 / 0.25);
  CHECK(mutual_info(j) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(mutual_info(j) == doctest::Approx(0.19274).epsilon(1e-4));
  CHECK(mutual_info(j) / std::log(2.0) == doctest::Approx(0.2781).epsilon(1e-3));
  CHECK_THROWS_AS(mutual_info(Table(2, 2, {0.5, 0.5, 0.5, 0.5})), ContractError);
  CHECK_THROWS_AS(mutual_info(Table(1, 2, {1.5, -0.5})), ContractError);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const DiscreteSystem s = random_system(rng);
    CHECK(std::abs(mutual_info(s.p_xy) - mutual_info(s.p_xy.transposed())) <= 1e-12);
    CHECK(mutual_info(s.p_xy) >= 0.0);
  }
}

TEST_CASE("kl_divergence and entropy") {
  CHECK(kl_divergence({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(std::isinf(kl_divergence({0.5, 0.5}, {1.0, 0.0})));
  CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(entropy({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("derived_marginals") {
  SUBCASE("identity encoder on uniform X") {
    DiscreteSystem s;
    s.p_xy = Table(3, 2, {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6});
    s.enc = identity(3);
    s.dec_x = identity(3);
    s.embed = Table(3, 1, {0, 1, 2});
    const auto m = derived_marginals(s);
    for (double p : m.p_zhat) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("unreachable zhat is flagged") {
    DiscreteSystem s = binary_identity();
    s.enc = Table(2, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    s.dec_x = Table(3, 2, {1.0, 0.0, 0.0, 1.0, 0.5, 0.5});
    const auto m = derived_marginals(s);
    CHECK(m.zhat_defined == std::vector<bool>{true, true, false});
    CHECK(m.p_zhat[2] == 0.0);
    CHECK(std::isfinite(exact_rdpb(s, {1, 1, 1, 1}).without_hy));
  }
  SUBCASE("random systems normalize and match enumeration") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const DiscreteSystem s = random_system(rng);
      const auto m = derived_marginals(s);
      double total = 0.0;
      for (double p : m.p_zhat) total += p;
      CHECK(std::abs(total - 1.0) <= 1e-12);
      // p(zhat) and p(xhat) by explicit loops.
      for (std::size_t z = 0; z < s.enc.cols(); ++z) {
        double pz = 0.0;
        for (std::size_t x = 0; x < s.p_xy.rows(); ++x)
          for (std::size_t y = 0; y < s.p_xy.cols(); ++y) pz += s.p_xy(x, y) * s.enc(x, z);
        CHECK(std::abs(pz - m.p_zhat[z]) <= 1e-12);
        for (std::size_t y = 0; y < s.p_xy.cols(); ++y) {
          double pyz = 0.0;
          for (std::size_t x = 0; x < s.p_xy.rows(); ++x) pyz += s.p_xy(x, y) * s.enc(x, z);
          CHECK(std::abs(pyz / pz - m.p_y_given_zhat(z, y)) <= 1e-12);
        }
      }
      for (std::size_t xh = 0; xh < s.p_xy.rows(); ++xh) {
        double p = 0.0;
        for (std::size_t z = 0; z < s.enc.cols(); ++z) p += m.p_zhat[z] * s.dec_x(z, xh);
        CHECK(std::abs(p - m.p_xhat[xh]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("exact_rdpb") {
  SUBCASE("binary identity system") {
    const auto v = exact_rdpb(binary_identity(), {1.0, 1.0, 1.0, 1.0});
    CHECK(v.terms.conditional_ce == doctest::Approx(0.0));
    CHECK(v.terms.i_zx == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(v.terms.distortion == 0.0);
    CHECK(v.terms.perception == doctest::Approx(0.0));
    CHECK(v.without_hy == doctest::Approx(0.6931).epsilon(1e-4));
    CHECK(v.with_hy == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("independent system with a perfect-marginal decoder") {
    DiscreteSystem s;
    const std::vector<double> px{0.2, 0.3, 0.5}, py{0.6, 0.4};
    s.p_xy = Table(3, 2);
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 2; ++y) s.p_xy(x, y) = px[x] * py[y];
    s.enc = Table(3, 2, {0.7, 0.3, 0.7, 0.3, 0.7, 0.3});  // ignores x
    s.dec_x = Table(2, 3, {0.2, 0.3, 0.5, 0.2, 0.3, 0.5});
    s.embed = Table(3, 1, {0, 1, 2});
    const auto v = exact_rdpb(s, {1.0, 1.0, 1.0, 1.0});
    CHECK(v.terms.conditional_ce == doctest::Approx(entropy(py)).epsilon(1e-14));
    CHECK(v.terms.i_zx == doctest::Approx(0.0));
    CHECK(v.terms.perception == doctest::Approx(0.0));
  }
  SUBCASE("matches the brute-force evaluator") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
      const DiscreteSystem s = random_system(rng);
      const objective::RDPBWeights w{0.7, 1.3, 0.4, 1.0};
      const auto v = exact_rdpb(s, w);
      const auto b = test::brute_force_terms(s);
      CHECK(std::abs(v.terms.conditional_ce - b.conditional_ce) <= 1e-12);
      CHECK(std::abs(v.terms.i_zx - b.i_zx) <= 1e-12);
      CHECK(std::abs(v.terms.i_zy - b.i_zy) <= 1e-12);
      CHECK(std::abs(v.terms.h_y - b.h_y) <= 1e-12);
      CHECK(std::abs(v.terms.distortion - b.distortion) <= 1e-12);
      CHECK(std::abs(v.terms.perception - b.perception) <= 1e-12);
      const double without = b.conditional_ce + w.beta * b.i_zx + w.lambda * b.distortion + w.mu * b.perception;
      CHECK(std::abs(v.without_hy - without) <= 1e-12);
      CHECK(std::abs(v.with_hy - (without - b.h_y)) <= 1e-12);
    }
  }
}

TEST_CASE("exact_rdpvb and bound_gap") {
  const objective::RDPBWeights w{0.5, 1.0, 1.0, 1.0};
  SUBCASE("exact q closes the bound") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      const DiscreteSystem s = random_system(rng);
      const VariationalQ q = exact_q(s);
      CHECK(std::abs(exact_rdpvb(s, q, w).value - exact_rdpb(s, w).without_hy) <= 1e-12);
      const auto g = bound_gap(s, q, w);
      CHECK(std::abs(g.gap_y) <= 1e-12);
      CHECK(std::abs(g.gap_z) <= 1e-12);
    }
  }
  SUBCASE("uniform q_z on a skewed system is strictly above") {
    DiscreteSystem s;
    s.p_xy = Table(2, 2, {0.81, 0.09, 0.01, 0.09});
    s.enc = Table(2, 2, {0.95, 0.05, 0.1, 0.9});
    s.dec_x = identity(2);
    s.embed = Table(2, 1, {0.0, 1.0});
    VariationalQ q = exact_q(s);
    q.q_z = {0.5, 0.5};
    CHECK(exact_rdpvb(s, q, w).value > exact_rdpb(s, w).without_hy);
  }
  SUBCASE("a zero where p is positive is infinite and flagged") {
    const DiscreteSystem s = binary_identity();
    VariationalQ q = exact_q(s);
    q.q_z = {1.0, 0.0};
    const auto v = exact_rdpvb(s, q, w);
    CHECK(v.infinite);
    CHECK(std::isinf(v.value));
    CHECK(bound_gap(s, q, w).infinite);
  }
  SUBCASE("random q: gaps, identity and data processing") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
      const DiscreteSystem s = random_system(rng);
      const VariationalQ q = random_q(s, rng);
      const auto g = bound_gap(s, q, w);
      const auto v = exact_rdpvb(s, q, w);
      const auto e = exact_rdpb(s, w);
      CHECK(g.gap_y >= -1e-12);
      CHECK(g.gap_z >= -1e-12);
      CHECK(std::abs((v.value - e.without_hy) - (g.gap_y + w.beta * g.gap_z)) <= 1e-10);
      CHECK(v.value >= e.without_hy - 1e-12);
      CHECK(e.terms.i_zy <= mutual_info(s.p_xy) + 1e-10);
    }
  }
}

TEST_CASE("validation") {
  DiscreteSystem s = binary_identity();
  CHECK_NOTHROW(s.validate());
  s.enc(0, 0) = 0.9;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s = binary_identity();
  s.embed = Table(3, 1);
  CHECK_THROWS_AS(s.validate(), ContractError);
  VariationalQ q = exact_q(binary_identity());
  q.q_z = {0.5, 0.6};
  CHECK_THROWS_AS(q.validate(binary_identity()), ContractError);
}

TEST_CASE("verify summary") {
  const auto v = verify(300, 1, {0.5, 1.0, 1.0, 0.1});
  CHECK(v.instances == 300);
  CHECK(v.max_negative_gap <= 1e-12);
  CHECK(v.max_identity_residual <= 1e-10);
  CHECK(v.max_dpi_violation <= 1e-10);
  CHECK(v.infinite_instances == 0);
}

TEST_CASE("flat_simplex") {
  Rng rng(13);
  for (std::size_t n : {2u, 3u, 5u}) {
    const auto p = flat_simplex(n, rng);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}
