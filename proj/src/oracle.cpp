// SPDX-License-Identifier: Apache-2.0
#include "rdpb/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rdpb::oracle {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_distribution(const std::vector<double>& p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ContractError(what + ": negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > kTableTolerance) {
    throw ContractError(what + ": sums to " + std::to_string(s));
  }
}

void check_rows(const Table& t, const std::string& what) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::vector<double> row(t.data().begin() + r * t.cols(),
                            t.data().begin() + (r + 1) * t.cols());
    check_distribution(row, what + " row " + std::to_string(r));
  }
}

double xlogy_ratio(double p, double q) {
  if (p == 0.0) return 0.0;
  if (q == 0.0) return kInf;
  return p * std::log(p / q);
}

}  // namespace

Table::Table(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw DimensionError("table: size mismatch");
}

Table Table::transposed() const {
  Table t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::vector<double> Table::row_sums() const {
  std::vector<double> s(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) s[r] += (*this)(r, c);
  return s;
}

std::vector<double> Table::col_sums() const {
  std::vector<double> s(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) s[c] += (*this)(r, c);
  return s;
}

void DiscreteSystem::validate() const {
  check_distribution(p_xy.data(), "p_xy");
  if (enc.rows() != p_xy.rows()) throw ContractError("enc: row count must equal |X|");
  if (dec_x.rows() != enc.cols()) throw ContractError("dec_x: row count must equal |Zhat|");
  if (dec_x.cols() != p_xy.rows()) throw ContractError("dec_x: columns must cover |X|");
  if (embed.rows() != p_xy.rows()) throw ContractError("embed: one vector per X symbol");
  check_rows(enc, "enc");
  check_rows(dec_x, "dec_x");
}

void VariationalQ::validate(const DiscreteSystem& sys) const {
  if (q_z.size() != sys.enc.cols()) throw ContractError("q_z: size must equal |Zhat|");
  if (q_y_given_z.rows() != sys.enc.cols() || q_y_given_z.cols() != sys.p_xy.cols()) {
    throw ContractError("q_y_given_z: shape must be |Zhat| x |Y|");
  }
  check_distribution(q_z, "q_z");
  check_rows(q_y_given_z, "q_y_given_z");
}

double mutual_info(const Table& joint) {
  check_distribution(joint.data(), "mutual_info joint");
  const auto pa = joint.row_sums();
  const auto pb = joint.col_sums();
  double mi = 0.0;
  for (std::size_t a = 0; a < joint.rows(); ++a) {
    for (std::size_t b = 0; b < joint.cols(); ++b) {
      const double p = joint(a, b);
      if (p > 0.0) mi += p * std::log(p / (pa[a] * pb[b]));
    }
  }
  return std::max(0.0, mi);
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ContractError("kl_divergence: lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += xlogy_ratio(p[i], q[i]);
  return kl;
}

Marginals derived_marginals(const DiscreteSystem& sys) {
  sys.validate();
  const std::size_t nx = sys.p_xy.rows();
  const std::size_t ny = sys.p_xy.cols();
  const std::size_t nz = sys.enc.cols();
  Marginals m;
  m.p_x = sys.p_xy.row_sums();
  m.p_y = sys.p_xy.col_sums();
  m.p_zhat.assign(nz, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z) m.p_zhat[z] += m.p_x[x] * sys.enc(x, z);

  m.p_y_given_zhat = Table(nz, ny);
  m.zhat_defined.assign(nz, false);
  for (std::size_t z = 0; z < nz; ++z) {
    if (m.p_zhat[z] <= 0.0) continue;
    m.zhat_defined[z] = true;
    for (std::size_t y = 0; y < ny; ++y) {
      double s = 0.0;
      for (std::size_t x = 0; x < nx; ++x) s += sys.p_xy(x, y) * sys.enc(x, z);
      m.p_y_given_zhat(z, y) = s / m.p_zhat[z];
    }
  }

  m.p_xhat.assign(nx, 0.0);
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t xh = 0; xh < nx; ++xh) m.p_xhat[xh] += m.p_zhat[z] * sys.dec_x(z, xh);
  return m;
}

namespace {

// Terms shared by both objectives: lambda E[D] + mu KL(p_X || p_Xhat).
struct ReconstructionTerms {
  double distortion;
  double perception;
};

ReconstructionTerms reconstruction_terms(const DiscreteSystem& sys, const Marginals& m) {
  const std::size_t nx = sys.p_xy.rows();
  const std::size_t nz = sys.enc.cols();
  const std::size_t e = sys.embed.cols();
  double distortion = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t z = 0; z < nz; ++z) {
      const double pxz = m.p_x[x] * sys.enc(x, z);
      if (pxz == 0.0) continue;
      for (std::size_t xh = 0; xh < nx; ++xh) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < e; ++k) {
          const double d = sys.embed(x, k) - sys.embed(xh, k);
          d2 += d * d;
        }
        distortion += pxz * sys.dec_x(z, xh) * d2;
      }
    }
  }
  return {distortion, kl_divergence(m.p_x, m.p_xhat)};
}

double weighted_tail(const objective::RDPBWeights& w, const ReconstructionTerms& r) {
  double v = w.lambda * r.distortion;
  if (w.mu != 0.0) v += w.mu * r.perception;
  return v;
}

}  // namespace

RdpbValue exact_rdpb(const DiscreteSystem& sys, const objective::RDPBWeights& w) {
  const Marginals m = derived_marginals(sys);
  const std::size_t nx = sys.p_xy.rows();
  const std::size_t ny = sys.p_xy.cols();
  const std::size_t nz = sys.enc.cols();
  RdpbValue out;
  RdpbTerms& t = out.terms;

  // E_{p(x,y) p(zhat|x)}[-ln p(y|zhat)], skipping measure-zero zhat.
  for (std::size_t z = 0; z < nz; ++z) {
    if (!m.zhat_defined[z]) continue;
    for (std::size_t y = 0; y < ny; ++y) {
      const double pyz = m.p_y_given_zhat(z, y) * m.p_zhat[z];
      if (pyz > 0.0) t.conditional_ce -= pyz * std::log(m.p_y_given_zhat(z, y));
    }
  }
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t z = 0; z < nz; ++z) {
      const double pxz = m.p_x[x] * sys.enc(x, z);
      if (pxz > 0.0) t.i_zx += pxz * std::log(sys.enc(x, z) / m.p_zhat[z]);
    }
  }
  t.h_y = entropy(m.p_y);
  t.i_zy = t.h_y - t.conditional_ce;
  const ReconstructionTerms r = reconstruction_terms(sys, m);
  t.distortion = r.distortion;
  t.perception = r.perception;

  out.without_hy = t.conditional_ce + w.beta * t.i_zx + weighted_tail(w, r);
  out.with_hy = out.without_hy - t.h_y;
  return out;
}

RdpvbValue exact_rdpvb(const DiscreteSystem& sys, const VariationalQ& q,
                       const objective::RDPBWeights& w) {
  const Marginals m = derived_marginals(sys);
  q.validate(sys);
  const std::size_t nx = sys.p_xy.rows();
  const std::size_t ny = sys.p_xy.cols();
  const std::size_t nz = sys.enc.cols();
  RdpvbValue out;
  double ce = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t z = 0; z < nz; ++z) {
        const double p = sys.p_xy(x, y) * sys.enc(x, z);
        if (p == 0.0) continue;
        if (q.q_y_given_z(z, y) == 0.0) {
          out.infinite = true;
          continue;
        }
        ce -= p * std::log(q.q_y_given_z(z, y));
      }
    }
  }
  double rate = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    std::vector<double> row(sys.enc.data().begin() + x * nz,
                            sys.enc.data().begin() + (x + 1) * nz);
    const double kl = kl_divergence(row, q.q_z);
    if (m.p_x[x] > 0.0) {
      if (std::isinf(kl)) out.infinite = true;
      else rate += m.p_x[x] * kl;
    }
  }
  if (out.infinite) {
    out.value = kInf;
    return out;
  }
  out.value = ce + w.beta * rate + weighted_tail(w, reconstruction_terms(sys, m));
  return out;
}

BoundGap bound_gap(const DiscreteSystem& sys, const VariationalQ& q,
                   const objective::RDPBWeights& w) {
  (void)w;
  const Marginals m = derived_marginals(sys);
  q.validate(sys);
  const std::size_t ny = sys.p_xy.cols();
  const std::size_t nz = sys.enc.cols();
  BoundGap g;
  for (std::size_t z = 0; z < nz; ++z) {
    if (!m.zhat_defined[z]) continue;
    for (std::size_t y = 0; y < ny; ++y) {
      const double v = xlogy_ratio(m.p_y_given_zhat(z, y), q.q_y_given_z(z, y));
      g.gap_y += m.p_zhat[z] * v;
    }
  }
  g.gap_z = kl_divergence(m.p_zhat, q.q_z);
  g.infinite = std::isinf(g.gap_y) || std::isinf(g.gap_z);
  return g;
}

VariationalQ exact_q(const DiscreteSystem& sys) {
  const Marginals m = derived_marginals(sys);
  VariationalQ q;
  q.q_z = m.p_zhat;
  q.q_y_given_z = m.p_y_given_zhat;
  // Undefined rows are never weighted; fill them so q is a valid table.
  for (std::size_t z = 0; z < q.q_y_given_z.rows(); ++z) {
    if (m.zhat_defined[z]) continue;
    for (std::size_t y = 0; y < q.q_y_given_z.cols(); ++y)
      q.q_y_given_z(z, y) = 1.0 / static_cast<double>(q.q_y_given_z.cols());
  }
  return q;
}

std::vector<double> flat_simplex(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) {
    // Exp(1) spacings normalized give the uniform (Dirichlet(1)) simplex.
    v = -std::log(1.0 - rng.uniform(0.0, 1.0));
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

namespace {

Table random_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Table t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = flat_simplex(cols, rng);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = row[c];
  }
  return t;
}

std::size_t alphabet_size(Rng& rng) {
  return 2 + static_cast<std::size_t>(rng.engine()() % 4);
}

}  // namespace

DiscreteSystem random_system(Rng& rng) {
  const std::size_t nx = alphabet_size(rng);
  const std::size_t ny = alphabet_size(rng);
  const std::size_t nz = alphabet_size(rng);
  DiscreteSystem sys;
  sys.p_xy = Table(nx, ny, flat_simplex(nx * ny, rng));
  sys.enc = random_rows(nx, nz, rng);
  sys.dec_x = random_rows(nz, nx, rng);
  sys.embed = Table(nx, 2);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t k = 0; k < 2; ++k) sys.embed(x, k) = rng.uniform(-1.0, 1.0);
  return sys;
}

VariationalQ random_q(const DiscreteSystem& sys, Rng& rng) {
  VariationalQ q;
  q.q_z = flat_simplex(sys.enc.cols(), rng);
  q.q_y_given_z = random_rows(sys.enc.cols(), sys.p_xy.cols(), rng);
  return q;
}

VerifySummary verify(std::size_t instances, std::uint64_t seed,
                     const objective::RDPBWeights& w) {
  Rng rng(seed);
  VerifySummary s;
  s.instances = instances;
  s.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < instances; ++i) {
    const DiscreteSystem sys = random_system(rng);
    const VariationalQ q = random_q(sys, rng);
    const RdpbValue exact = exact_rdpb(sys, w);
    const RdpvbValue bound = exact_rdpvb(sys, q, w);
    const BoundGap gap = bound_gap(sys, q, w);
    if (bound.infinite || gap.infinite) {
      ++s.infinite_instances;
      continue;
    }
    s.min_gap = std::min({s.min_gap, gap.gap_y, gap.gap_z});
    const double residual =
        std::abs((bound.value - exact.without_hy) - (gap.gap_y + w.beta * gap.gap_z));
    s.max_identity_residual = std::max(s.max_identity_residual, residual);
    const double i_xy = mutual_info(sys.p_xy);
    s.max_dpi_violation = std::max(s.max_dpi_violation, exact.terms.i_zy - i_xy);
  }
  if (std::isinf(s.min_gap)) s.min_gap = 0.0;  // every instance had an infinite bound
  s.max_negative_gap = std::max(0.0, -s.min_gap);
  return s;
}

}  // namespace rdpb::oracle
