#include <doctest.h>

#include <cmath>

#include "rdpb/errors.hpp"
#include "rdpb/rng.hpp"
#include "rdpb/tsne.hpp"

using namespace rdpb;
using namespace rdpb::tsne;

namespace {

// Three well-separated clusters in 5-D.
Tensor clusters(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 5; ++k) v[i * 5 + k] = 4.0 * static_cast<double>((i % 3) == k) + rng.normal();
  return Tensor({n, 5}, v);
}

}  // namespace

TEST_CASE("embedding shape, objective and determinism") {
  Options o;
  o.iterations = 300;
  o.seed = 4;
  const Tensor x = clusters(120, 1);
  const Embedding a = tsne_embed(x, o);
  CHECK(a.coords.shape() == Shape{120, 2});
  CHECK(a.kl_trace.size() == 301);
  CHECK(a.kl_trace.back() < a.kl_trace.front());
  for (double e : a.bandwidth_entropy_error) CHECK(e < 1e-4);
  const Embedding b = tsne_embed(x, o);
  CHECK(std::vector<double>(a.coords.values().begin(), a.coords.values().end()) ==
        std::vector<double>(b.coords.values().begin(), b.coords.values().end()));
}

TEST_CASE("perplexity and size limits") {
  const Tensor x = clusters(40, 2);
  Options o;
  o.perplexity = 4.9;
  CHECK_THROWS_AS(tsne_embed(x, o), ContractError);
  o.perplexity = 13.1;  // (40 - 1) / 3 = 13
  CHECK_THROWS_AS(tsne_embed(x, o), ContractError);
  o.perplexity = 13.0;
  o.iterations = 5;
  CHECK_NOTHROW(tsne_embed(x, o));
  CHECK_THROWS_AS(tsne_embed(Tensor::zeros({5001, 2}), Options{}), ContractError);
}

TEST_CASE("parallel kernels match the serial reference") {
  const std::size_t n = 70;
  const Tensor x = clusters(n, 3);
  const auto d = kernels::squared_distances(x.values(), n, 5);
  CHECK(d == kernels::serial::squared_distances(x.values(), n, 5));

  std::vector<double> p;
  kernels::conditional_affinities(d, n, 10.0, 1e-5, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = (p[i * n + j] + p[j * n + i]) / (2.0 * n);
  Rng rng(5);
  std::vector<double> y(2 * n);
  rng.fill_normal(y, 1.0);
  std::vector<double> g1(2 * n), g2(2 * n);
  const double kl1 = kernels::gradient(p, 4.0, y, n, g1);
  const double kl2 = kernels::serial::gradient(p, 4.0, y, n, g2);
  CHECK(kl1 == doctest::Approx(kl2).epsilon(1e-12));
  for (std::size_t k = 0; k < 2 * n; ++k) CHECK(g1[k] == doctest::Approx(g2[k]).epsilon(1e-10));
}

TEST_CASE("perplexity calibration hits its entropy target") {
  const std::size_t n = 50;
  const Tensor x = clusters(n, 6);
  const auto d = kernels::squared_distances(x.values(), n, 5);
  std::vector<double> p;
  const auto err = kernels::conditional_affinities(d, n, 12.0, 1e-6, p);
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0, s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p[i * n + j];
      s += v;
      if (v > 0) h -= v * std::log(v);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(h - std::log(12.0)) < 1e-5);
    CHECK(err[i] < 1e-6);
  }
}
