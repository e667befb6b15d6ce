/*
 * Copyright 2026 The mteqtl authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mteqtl/common.hpp"
#include "mteqtl/normal.hpp"

namespace mteqtl {

inline constexpr int kMaxTissues = 16;

/// Tissue labels and per-tissue degrees of freedom. The degrees of freedom
/// are the tissue sample size minus the number of covariates the data were
/// residualized on; they must exceed 3 so the z scaling sqrt(dof - 3) is
/// real and positive.
struct TissuePanel {
  std::vector<std::string> names;
  std::vector<int> dof;

  int tissue_count() const { return static_cast<int>(names.size()); }

  int index_of(std::string_view name) const {
    for (int k = 0; k < tissue_count(); ++k)
      if (names[k] == name) return k;
    return -1;
  }

  TissuePanel subset(std::span<const int> keep) const {
    TissuePanel out;
    for (int k : keep) {
      out.names.push_back(names.at(static_cast<std::size_t>(k)));
      out.dof.push_back(dof.at(static_cast<std::size_t>(k)));
    }
    return out;
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> bad;
    const int k = tissue_count();
    if (k < 1 || k > kMaxTissues)
      bad.push_back("tissue count " + std::to_string(k) + " outside [1, " +
                    std::to_string(kMaxTissues) + "]");
    if (dof.size() != names.size())
      bad.push_back("dof count does not match tissue count");
    for (std::size_t i = 0; i < dof.size(); ++i)
      if (dof[i] <= 3)
        bad.push_back("dof must exceed 3 for tissue " + names[i] + " (" +
                      std::to_string(dof[i]) + ")");
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j)
        if (names[i] == names[j]) bad.push_back("duplicate tissue name " + names[i]);
    return bad;
  }
};

/// Presence/absence pattern over tissues, packed as a bitmask. Bit b of the
/// mask (b = 0 least significant) is tissue b+1 in panel order; a set bit
/// means an eQTL is present in that tissue.
struct Configuration {
  std::uint32_t mask = 0;

  Configuration() = default;
  explicit Configuration(std::uint32_t m) : mask(m) {}

  bool has_tissue(int k) const { return (mask >> k) & 1u; }
  int active_count() const { return std::popcount(mask); }

  /// Binary string with tissue 1 leftmost, e.g. mask 0b0101 at K=4 -> "1010".
  std::string to_string(int tissue_count) const {
    std::string s(static_cast<std::size_t>(tissue_count), '0');
    for (int k = 0; k < tissue_count; ++k)
      if (has_tissue(k)) s[static_cast<std::size_t>(k)] = '1';
    return s;
  }

  static Configuration from_string(std::string_view s) {
    if (s.empty() || s.size() > kMaxTissues)
      throw DataError("configuration string length must be in [1, 16]: '" +
                      std::string(s) + "'");
    std::uint32_t m = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (s[k] == '1')
        m |= (1u << k);
      else if (s[k] != '0')
        throw DataError("configuration string must be binary: '" + std::string(s) + "'");
    }
    return Configuration{m};
  }

  friend bool operator==(Configuration a, Configuration b) { return a.mask == b.mask; }
  friend bool operator<(Configuration a, Configuration b) { return a.mask < b.mask; }
};

/// Parameters of the 2^K-component Gaussian mixture over z vectors:
/// component gamma is N(mu0 * gamma, Delta + Sigma masked to gamma) with
/// prior weight p[gamma.mask].
struct ModelParams {
  Eigen::VectorXd mu0;    // K
  Eigen::MatrixXd delta;  // K x K, unit diagonal, positive definite
  Eigen::MatrixXd sigma;  // K x K, positive semidefinite
  Eigen::VectorXd p;      // 2^K, simplex indexed by configuration mask

  int tissue_count() const { return static_cast<int>(mu0.size()); }
  std::uint32_t config_count() const { return static_cast<std::uint32_t>(p.size()); }
};

/// A panel together with fitted or specified parameters; the unit the model
/// file stores.
struct Model {
  TissuePanel panel;
  ModelParams params;
};

inline constexpr double kSimplexTol = 1e-12;
inline constexpr double kSymmetryTol = 1e-10;

/// Checks every ModelParams invariant and reports each violation with the
/// offending entry. Empty result means the model is valid.
inline std::vector<std::string> validate_model(const ModelParams& theta) {
  std::vector<std::string> bad;
  const int k = theta.tissue_count();
  if (k < 1 || k > kMaxTissues) {
    bad.push_back("tissue count " + std::to_string(k) + " outside [1, " +
                  std::to_string(kMaxTissues) + "]");
    return bad;
  }
  if (theta.delta.rows() != k || theta.delta.cols() != k)
    bad.push_back("Delta is not K x K");
  if (theta.sigma.rows() != k || theta.sigma.cols() != k)
    bad.push_back("Sigma is not K x K");
  if (theta.p.size() != (std::int64_t{1} << k))
    bad.push_back("p has " + std::to_string(theta.p.size()) + " entries, expected 2^K");
  if (!bad.empty()) return bad;

  if (!theta.mu0.allFinite()) bad.push_back("mu0 has non-finite entries");
  if (!theta.delta.allFinite()) bad.push_back("Delta has non-finite entries");
  if (!theta.sigma.allFinite()) bad.push_back("Sigma has non-finite entries");
  if (!theta.p.allFinite()) bad.push_back("p has non-finite entries");
  if (!bad.empty()) return bad;

  for (int i = 0; i < k; ++i)
    if (theta.delta(i, i) != 1.0) {
      std::ostringstream os;
      os << "diag(Delta) != 1 at index " << i << " (" << theta.delta(i, i) << ")";
      bad.push_back(os.str());
    }
  if ((theta.delta - theta.delta.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
    bad.push_back("Delta not symmetric");
  if ((theta.sigma - theta.sigma.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
    bad.push_back("Sigma not symmetric");

  // Positive definiteness of Delta is defined operationally by Cholesky
  // success; no eigenvalue threshold.
  Eigen::LLT<Eigen::MatrixXd> llt(theta.delta);
  if (llt.info() != Eigen::Success) bad.push_back("Delta not positive definite");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(theta.sigma,
                                                    Eigen::EigenvaluesOnly);
  if (es.info() == Eigen::Success) {
    const double min_eig = es.eigenvalues().minCoeff();
    const double max_eig = es.eigenvalues().maxCoeff();
    if (min_eig < -1e-8 * std::max(1.0, std::abs(max_eig))) {
      std::ostringstream os;
      os << "Sigma not PSD (min eigenvalue " << min_eig << ")";
      bad.push_back(os.str());
    }
  } else {
    bad.push_back("Sigma eigendecomposition failed");
  }

  for (std::int64_t g = 0; g < theta.p.size(); ++g)
    if (theta.p(g) < 0.0) {
      std::ostringstream os;
      os << "p[" << Configuration{static_cast<std::uint32_t>(g)}.to_string(k)
         << "] negative (" << theta.p(g) << ")";
      bad.push_back(os.str());
    }
  const double psum = theta.p.sum();
  if (std::abs(psum - 1.0) > kSimplexTol) {
    std::ostringstream os;
    os << "p sums to " << psum << ", not 1";
    bad.push_back(os.str());
  }
  return bad;
}

/// Throws DataError listing all violations if the model is invalid.
inline void require_valid(const ModelParams& theta) {
  const auto bad = validate_model(theta);
  if (bad.empty()) return;
  std::string msg = "invalid model:";
  for (const auto& b : bad) msg += "\n  " + b;
  throw DataError(msg);
}

/// Covariance of component gamma: Delta plus Sigma with rows/columns outside
/// gamma zeroed. On the support of gamma this equals Delta + Sigma exactly;
/// off-support rows and columns are Delta's.
inline Eigen::MatrixXd component_covariance(const ModelParams& theta,
                                            Configuration gamma) {
  const int k = theta.tissue_count();
  Eigen::MatrixXd cov = theta.delta;
  for (int i = 0; i < k; ++i) {
    if (!gamma.has_tissue(i)) continue;
    for (int j = 0; j < k; ++j)
      if (gamma.has_tissue(j)) cov(i, j) += theta.sigma(i, j);
  }
  return cov;
}

inline Eigen::VectorXd component_mean(const ModelParams& theta, Configuration gamma) {
  const int k = theta.tissue_count();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < k; ++i)
    if (gamma.has_tissue(i)) mean(i) = theta.mu0(i);
  return mean;
}

/// Per-component Gaussian machinery, factorized once per parameter value and
/// shared across all evaluation points. Construction performs the 2^K
/// Cholesky factorizations; everything afterwards is read-only and safe to
/// use from any number of threads.
class ComponentTable {
 public:
  explicit ComponentTable(const ModelParams& theta)
      : k_(theta.tissue_count()),
        count_(theta.config_count()),
        log_p_(count_),
        means_(k_, count_),
        log_norm_(count_),
        chol_(count_),
        ok_(count_, false),
        quad_weights_(count_, k_ * (k_ + 1) / 2) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    bool any_mean = false;
    bool any_active_ok = false;
    std::vector<Eigen::MatrixXd> precisions(count_);
    for (std::uint32_t g = 0; g < count_; ++g) {
      const Configuration gamma{g};
      log_p_(g) = theta.p(g) > 0.0 ? std::log(theta.p(g)) : neg_inf;
      means_.col(g) = component_mean(theta, gamma);
      if (means_.col(g).cwiseAbs().maxCoeff() > 0.0) any_mean = true;
      Eigen::LLT<Eigen::MatrixXd> llt(component_covariance(theta, gamma));
      if (llt.info() != Eigen::Success) {
        if (theta.p(g) > 0.0)
          throw NumericalError(
              "singular component covariance for configuration " +
              gamma.to_string(k_));
        log_norm_(g) = neg_inf;
        quad_weights_.row(g).setZero();
        continue;
      }
      ok_[g] = true;
      if (theta.p(g) > 0.0) any_active_ok = true;
      chol_[g] = llt.matrixL();
      const double log_det =
          2.0 * chol_[g].diagonal().array().log().sum();
      log_norm_(g) = -0.5 * (k_ * kLogTwoPi + log_det);
      Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(k_, k_));
      precision = 0.5 * (precision + precision.transpose());
      // Flattened upper triangle with off-diagonal doubling and the -1/2
      // density factor folded in, one gemm row per component.
      std::int64_t idx = 0;
      for (int a = 0; a < k_; ++a)
        for (int b = a; b < k_; ++b)
          quad_weights_(g, idx++) = (a == b ? -0.5 : -1.0) * precision(a, b);
      precisions[g] = std::move(precision);
    }
    if (!any_active_ok)
      throw NumericalError("singular model: no usable mixture component");
    has_mean_ = any_mean;
    if (has_mean_) {
      linear_ = Eigen::MatrixXd(count_, k_);
      mean_quad_ = Eigen::VectorXd::Zero(count_);
      for (std::uint32_t g = 0; g < count_; ++g) {
        if (!ok_[g]) {
          linear_.row(g).setZero();
          continue;
        }
        linear_.row(g) = (precisions[g] * means_.col(g)).transpose();
        mean_quad_(g) = linear_.row(g).dot(means_.col(g));
      }
    }
  }

  int tissue_count() const { return k_; }
  std::uint32_t size() const { return count_; }
  const Eigen::VectorXd& log_weights() const { return log_p_; }
  bool component_ok(std::uint32_t mask) const { return ok_[mask]; }
  const Eigen::MatrixXd& chol_lower(std::uint32_t mask) const { return chol_[mask]; }
  Eigen::VectorXd mean(std::uint32_t mask) const { return means_.col(mask); }

  /// log f_gamma(z) through the cached Cholesky factor.
  double log_component_density(const Eigen::VectorXd& z, Configuration gamma) const {
    if (!ok_[gamma.mask])
      throw NumericalError("singular component covariance for configuration " +
                           gamma.to_string(k_));
    Eigen::VectorXd centered = z - means_.col(gamma.mask);
    chol_[gamma.mask].triangularView<Eigen::Lower>().solveInPlace(centered);
    return log_norm_(gamma.mask) - 0.5 * centered.squaredNorm();
  }

  /// log f(z) = logsumexp over components of log p + log f_gamma.
  double log_mixture_density(const Eigen::VectorXd& z) const {
    std::vector<double> terms(count_);
    for (std::uint32_t g = 0; g < count_; ++g)
      terms[g] = ok_[g] && std::isfinite(log_p_(g))
                     ? log_p_(g) + log_component_density(z, Configuration{g})
                     : -std::numeric_limits<double>::infinity();
    return log_sum_exp(terms);
  }

  /// Posterior over all configurations, computed in log space then
  /// normalized so entries sum to one.
  Eigen::VectorXd posterior(const Eigen::VectorXd& z) const {
    Eigen::VectorXd logterm(count_);
    for (std::uint32_t g = 0; g < count_; ++g)
      logterm(g) = ok_[g] && std::isfinite(log_p_(g))
                       ? log_p_(g) + log_component_density(z, Configuration{g})
                       : -std::numeric_limits<double>::infinity();
    const double m = logterm.maxCoeff();
    Eigen::VectorXd post = (logterm.array() - m).exp();
    post /= post.sum();
    return post;
  }

  /// Batched log densities: z_block is K x n (one point per column), out is
  /// 2^K x n. Components with singular covariance (necessarily zero weight)
  /// get -inf rows. The quadratic forms z'Wz unroll over the K(K+1)/2
  /// distinct index pairs, so all components evaluate in one matrix product
  /// against the pairwise products of z; agreement with the Cholesky path
  /// is at the level of rounding error.
  void log_densities(const Eigen::Ref<const Eigen::MatrixXd>& z_block,
                     Eigen::Ref<Eigen::MatrixXd> out) const {
    const std::int64_t n = z_block.cols();
    const std::int64_t pairs = k_ * (k_ + 1) / 2;
    Eigen::MatrixXd products(pairs, n);
    std::int64_t idx = 0;
    for (int a = 0; a < k_; ++a)
      for (int b = a; b < k_; ++b)
        products.row(idx++) = z_block.row(a).cwiseProduct(z_block.row(b));
    out.noalias() = quad_weights_ * products;
    out.colwise() += log_norm_;
    if (has_mean_)
      out.noalias() += linear_ * z_block - 0.5 * mean_quad_ * Eigen::RowVectorXd::Ones(n);
    for (std::uint32_t g = 0; g < count_; ++g)
      if (!ok_[g]) out.row(g).setConstant(-std::numeric_limits<double>::infinity());
  }

 private:
  int k_;
  std::uint32_t count_;
  Eigen::VectorXd log_p_;
  Eigen::MatrixXd means_;    // K x 2^K
  Eigen::VectorXd log_norm_; // -(K log 2pi + log det V_gamma) / 2
  std::vector<Eigen::MatrixXd> chol_;
  std::vector<bool> ok_;
  Eigen::MatrixXd quad_weights_;  // 2^K x K(K+1)/2, scaled precision triangles
  Eigen::MatrixXd linear_;        // 2^K x K, precision * mean
  Eigen::VectorXd mean_quad_;     // mean' precision mean
  bool has_mean_ = false;
};

inline double log_component_density(const Eigen::VectorXd& z, Configuration gamma,
                                    const ModelParams& theta) {
  const int k = theta.tissue_count();
  Eigen::LLT<Eigen::MatrixXd> llt(component_covariance(theta, gamma));
  if (llt.info() != Eigen::Success)
    throw NumericalError("singular component covariance for configuration " +
                         gamma.to_string(k));
  Eigen::VectorXd centered = z - component_mean(theta, gamma);
  llt.matrixL().solveInPlace(centered);
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (k * kLogTwoPi + log_det + centered.squaredNorm());
}

inline double log_mixture_density(const Eigen::VectorXd& z, const ModelParams& theta) {
  return ComponentTable(theta).log_mixture_density(z);
}

inline Eigen::VectorXd posterior_configs(const Eigen::VectorXd& z,
                                         const ModelParams& theta) {
  return ComponentTable(theta).posterior(z);
}

namespace detail {

/// Column count per density block, sized so the per-block work matrix stays
/// near 32M doubles even with many components.
inline std::int64_t block_columns(int /*tissue_count*/, std::int64_t configs) {
  const std::int64_t budget = std::int64_t{1} << 25;
  std::int64_t cols = budget / std::max<std::int64_t>(configs, 1);
  cols = std::min<std::int64_t>(cols, 8192);
  return std::max<std::int64_t>(cols, 128);
}

inline void check_subset(std::span<const int> subset, int tissue_count) {
  if (subset.empty()) throw DataError("invalid subset: empty");
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] < 0 || subset[i] >= tissue_count)
      throw DataError("invalid subset: tissue index " + std::to_string(subset[i]) +
                      " outside panel of " + std::to_string(tissue_count));
    if (i > 0 && subset[i] <= subset[i - 1])
      throw DataError("invalid subset: indices must be strictly increasing");
  }
}

/// Restriction of a full-panel mask to a subset, in subset order.
inline std::uint32_t restrict_mask(std::uint32_t mask, std::span<const int> subset) {
  std::uint32_t out = 0;
  for (std::size_t j = 0; j < subset.size(); ++j)
    if ((mask >> subset[j]) & 1u) out |= (1u << j);
  return out;
}

}  // namespace detail

/// Restricts the model to a tissue subset: mu0, Delta, Sigma keep the
/// selected rows/columns and the configuration masses aggregate over all
/// full-panel configurations with the same restriction. The result is again
/// a valid model of the same family.
inline ModelParams marginalize_model(const ModelParams& theta,
                                     std::span<const int> subset) {
  detail::check_subset(subset, theta.tissue_count());
  const int r = static_cast<int>(subset.size());
  ModelParams out;
  out.mu0 = Eigen::VectorXd(r);
  out.delta = Eigen::MatrixXd(r, r);
  out.sigma = Eigen::MatrixXd(r, r);
  for (int i = 0; i < r; ++i) {
    out.mu0(i) = theta.mu0(subset[i]);
    for (int j = 0; j < r; ++j) {
      out.delta(i, j) = theta.delta(subset[i], subset[j]);
      out.sigma(i, j) = theta.sigma(subset[i], subset[j]);
    }
  }
  out.p = Eigen::VectorXd::Zero(std::int64_t{1} << r);
  for (std::uint32_t g = 0; g < theta.config_count(); ++g)
    out.p(detail::restrict_mask(g, subset)) += theta.p(g);
  return out;
}

/// One-dimensional marginal of the mixture for a single tissue: a two
/// component mixture of N(0, 1) with weight 1 - q and N(mu0_k, 1 + Sigma_kk)
/// with weight q, where q is the total mass of configurations active in k.
struct TissueMarginal {
  double q = 0.0;        // P(eQTL in tissue k)
  double alt_mean = 0.0; // mu0_k
  double alt_var = 1.0;  // 1 + Sigma_kk

  double density(double x) const {
    const double sd = std::sqrt(alt_var);
    return (1.0 - q) * norm_pdf(x) + q * norm_pdf((x - alt_mean) / sd) / sd;
  }

  double log_density(double x) const { return std::log(density(x)); }

  double cdf(double x) const {
    return (1.0 - q) * norm_cdf(x) + q * norm_cdf((x - alt_mean) / std::sqrt(alt_var));
  }

  /// Inverse CDF by bisection; the interval is narrowed below `tol` in x.
  double quantile(double prob, double tol = 1e-10) const {
    const double sd = std::sqrt(alt_var);
    double lo = std::min(0.0, alt_mean) - 10.0 * std::max(1.0, sd);
    double hi = std::max(0.0, alt_mean) + 10.0 * std::max(1.0, sd);
    while (cdf(lo) > prob) lo -= 10.0;
    while (cdf(hi) < prob) hi += 10.0;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < prob ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

inline TissueMarginal marginal_tissue_mixture(const ModelParams& theta, int k) {
  if (k < 0 || k >= theta.tissue_count())
    throw DataError("tissue index " + std::to_string(k) + " outside panel");
  TissueMarginal out;
  for (std::uint32_t g = 0; g < theta.config_count(); ++g)
    if ((g >> k) & 1u) out.q += theta.p(g);
  out.alt_mean = theta.mu0(k);
  out.alt_var = 1.0 + theta.sigma(k, k);
  return out;
}

}  // namespace mteqtl
