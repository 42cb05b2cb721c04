// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "rdpb/objective.hpp"
#include "rdpb/rng.hpp"

namespace rdpb::oracle {

/// Dense row-major probability table.
class Table {
 public:
  Table() = default;
  Table(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Table(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const std::vector<double>& data() const { return data_; }

  Table transposed() const;
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kTableTolerance = 1e-12;

/// Toy instance of the chain Y <- X -> Zhat -> Xhat with finite alphabets.
/// The reconstruction alphabet is the source alphabet, so `embed` serves both.
struct DiscreteSystem {
  Table p_xy;   // |X| x |Y| joint
  Table enc;    // |X| x |Zhat|, rows p(zhat | x) (encoder composed with channel)
  Table dec_x;  // |Zhat| x |X|, rows p(xhat | zhat)
  Table embed;  // |X| x e, feature vector per symbol; distortion is squared distance

  /// Throws ContractError unless every table is a valid (conditional)
  /// distribution within kTableTolerance and the shapes agree.
  void validate() const;
};

struct VariationalQ {
  std::vector<double> q_z;  // over Zhat
  Table q_y_given_z;        // |Zhat| x |Y|, rows q(y | zhat)

  void validate(const DiscreteSystem& sys) const;
};

/// I(A;B) in nats from a joint table; zero cells contribute 0.
double mutual_info(const Table& joint);

double entropy(const std::vector<double>& p);

/// KL(p || q) in nats; +inf when q is zero where p is positive.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct Marginals {
  std::vector<double> p_x;
  std::vector<double> p_y;
  std::vector<double> p_zhat;
  Table p_y_given_zhat;  // |Zhat| x |Y|; rows with p(zhat) = 0 are all zero
  std::vector<bool> zhat_defined;
  std::vector<double> p_xhat;
};

Marginals derived_marginals(const DiscreteSystem& sys);

struct RdpbTerms {
  double conditional_ce = 0.0;  // E[-ln p(y | zhat)] = H(Y | Zhat)
  double i_zx = 0.0;            // I(Zhat; X)
  double i_zy = 0.0;            // I(Zhat; Y)
  double h_y = 0.0;
  double distortion = 0.0;      // E[|embed(X) - embed(Xhat)|^2]
  double perception = 0.0;      // KL(p_X || p_Xhat), may be +inf
};

struct RdpbValue {
  double with_hy = 0.0;     // -I(Zhat;Y) + beta I + lambda E[D] + mu KL
  double without_hy = 0.0;  // with_hy + H(Y)
  RdpbTerms terms;
};

RdpbValue exact_rdpb(const DiscreteSystem& sys, const objective::RDPBWeights& w);

struct RdpvbValue {
  double value = 0.0;
  bool infinite = false;  // q is zero somewhere p is positive
};

RdpvbValue exact_rdpvb(const DiscreteSystem& sys, const VariationalQ& q,
                       const objective::RDPBWeights& w);

struct BoundGap {
  double gap_y = 0.0;  // E_{p(zhat)} KL(p(y|zhat) || q(y|zhat))
  double gap_z = 0.0;  // KL(p(zhat) || q(zhat))
  bool infinite = false;
};

BoundGap bound_gap(const DiscreteSystem& sys, const VariationalQ& q,
                   const objective::RDPBWeights& w);

/// The variational distributions that make the bound tight.
VariationalQ exact_q(const DiscreteSystem& sys);

/// Point drawn uniformly from the probability simplex of size n.
std::vector<double> flat_simplex(std::size_t n, Rng& rng);

/// Alphabet sizes uniform in {2..5}; every row from `flat_simplex`;
/// embeddings uniform in [-1, 1]^2.
DiscreteSystem random_system(Rng& rng);
VariationalQ random_q(const DiscreteSystem& sys, Rng& rng);

struct VerifySummary {
  std::size_t instances = 0;
  double min_gap = 0.0;               // smallest gap component over finite instances
  double max_negative_gap = 0.0;      // max(0, -min_gap)
  double max_identity_residual = 0.0;
  double max_dpi_violation = 0.0;     // max(0, I(Zhat;Y) - I(X;Y))
  std::size_t infinite_instances = 0;
};

VerifySummary verify(std::size_t instances, std::uint64_t seed,
                     const objective::RDPBWeights& w);

}  // namespace rdpb::oracle
