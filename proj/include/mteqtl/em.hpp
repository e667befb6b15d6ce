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

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mteqtl/common.hpp"
#include "mteqtl/model.hpp"
#include "mteqtl/normal.hpp"
#include "mteqtl/zmatrix.hpp"

namespace mteqtl {

struct FitOptions {
  enum class Mu0Mode { kFixedZero, kFree };

  double tol = 0.01;              // absolute log-likelihood change threshold
  int max_iter = 1000;
  Mu0Mode mu0_mode = Mu0Mode::kFixedZero;
  std::optional<ModelParams> init;
  std::uint64_t seed = 0;         // reserved for randomized initializations
  std::int64_t chunk_size = 65536;
  int threads = 1;
  bool record_params = false;

  void check() const {
    if (!(tol > 0.0)) throw DataError("tol must be positive");
    if (max_iter < 1) throw DataError("max_iter must be at least 1");
    if (chunk_size < 1) throw DataError("chunk_size must be at least 1");
    if (threads < 1) throw DataError("threads must be at least 1");
  }
};

struct FitTrace {
  std::vector<double> loglik;         // log-likelihood of each visited iterate
  std::vector<ModelParams> params;    // per-iteration snapshots when recorded
  int psd_repairs = 0;
  int iterations = 0;                 // accepted parameter updates
  std::string termination;            // converged | max_iter | aborted:...
};

/// Nearest-by-truncation positive semidefinite matrix: eigendecompose and
/// drop the terms with negative eigenvalues. Idempotent.
inline Eigen::MatrixXd psd_project(const Eigen::MatrixXd& mat, bool* repaired = nullptr) {
  if (mat.rows() != mat.cols()) throw DataError("psd_project needs a square matrix");
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol)
    throw DataError("psd_project needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat);
  if (es.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed in psd_project");
  if (es.eigenvalues().minCoeff() >= 0.0) {
    if (repaired) *repaired = false;
    return mat;
  }
  if (repaired) *repaired = true;
  const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out =
      es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

namespace detail {

/// Sufficient statistics of one E-step pass. Merging is plain addition and
/// is always performed in chunk-index order, so results are independent of
/// the number of worker threads.
struct EStepStats {
  double loglik = 0.0;
  double weight0 = 0.0;          // sum of p(0 | z)
  double weight1 = 0.0;          // sum of p(1 | z)
  Eigen::MatrixXd moment0;       // sum of p(0 | z) z z'
  Eigen::VectorXd sum1;          // sum of p(1 | z) z
  Eigen::MatrixXd moment1;       // sum of p(1 | z) z z'
  Eigen::VectorXd posterior_sum; // per-configuration posterior totals

  explicit EStepStats(int k = 0, std::int64_t configs = 0)
      : moment0(Eigen::MatrixXd::Zero(k, k)),
        sum1(Eigen::VectorXd::Zero(k)),
        moment1(Eigen::MatrixXd::Zero(k, k)),
        posterior_sum(Eigen::VectorXd::Zero(configs)) {}

  void merge(const EStepStats& other) {
    loglik += other.loglik;
    weight0 += other.weight0;
    weight1 += other.weight1;
    moment0 += other.moment0;
    sum1 += other.sum1;
    moment1 += other.moment1;
    posterior_sum += other.posterior_sum;
  }
};

/// One chunk of the E-step: batched densities, per-column log-sum-exp, and
/// (optionally) the weighted moment accumulations the M-step needs.
inline EStepStats estep_chunk(const Eigen::Ref<const Eigen::MatrixXd>& z_chunk,
                              const ComponentTable& table, bool moments) {
  const int k = table.tissue_count();
  const std::int64_t configs = table.size();
  const std::int64_t n = z_chunk.cols();
  const std::int64_t block = block_columns(k, configs);
  EStepStats stats(k, configs);
  const Eigen::VectorXd& logp = table.log_weights();

  Eigen::MatrixXd logf(configs, std::min(block, n));
  std::vector<double> row_loglik(static_cast<std::size_t>(n));
  Eigen::RowVectorXd colmax, colsum;
  Eigen::RowVectorXd w0, w1;
  for (std::int64_t start = 0; start < n; start += block) {
    const std::int64_t cols = std::min(block, n - start);
    auto zb = z_chunk.middleCols(start, cols);
    auto lf = logf.leftCols(cols);
    table.log_densities(zb, lf);
    lf.colwise() += logp;
    colmax = lf.colwise().maxCoeff();
    lf.rowwise() -= colmax;
    lf = lf.array().exp();
    colsum = lf.colwise().sum();
    for (std::int64_t j = 0; j < cols; ++j)
      row_loglik[static_cast<std::size_t>(start + j)] =
          std::log(colsum(j)) + colmax(j);
    if (!moments) continue;
    // Normalize columns to posteriors.
    lf.array().rowwise() /= colsum.array();
    stats.posterior_sum += lf.rowwise().sum();
    w0 = lf.row(0);
    w1 = lf.row(configs - 1);
    stats.weight0 += w0.sum();
    stats.weight1 += w1.sum();
    stats.moment0.noalias() +=
        (zb.array().rowwise() * w0.array()).matrix() * zb.transpose();
    stats.moment1.noalias() +=
        (zb.array().rowwise() * w1.array()).matrix() * zb.transpose();
    stats.sum1.noalias() += zb * w1.transpose();
  }
  stats.loglik = pairwise_sum(row_loglik);
  return stats;
}

inline EStepStats estep(const ZMatrix& zm, const ComponentTable& table,
                        std::int64_t chunk_size, int threads, bool moments) {
  const std::int64_t n = zm.pair_count();
  const std::int64_t chunks = (n + chunk_size - 1) / chunk_size;
  std::vector<EStepStats> per_chunk(
      static_cast<std::size_t>(chunks),
      EStepStats(table.tissue_count(), table.size()));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t start = c * chunk_size;
    const std::int64_t cols = std::min(chunk_size, n - start);
    per_chunk[static_cast<std::size_t>(c)] =
        estep_chunk(zm.z.middleCols(start, cols), table, moments);
  }
  EStepStats total(table.tissue_count(), table.size());
  for (const auto& s : per_chunk) total.merge(s);
  return total;
}

}  // namespace detail

/// Sum over pairs of the log mixture density. Chunked with pairwise
/// summation per chunk and chunk-ordered combination, so the value is
/// deterministic for a fixed chunk size regardless of thread count.
inline double log_likelihood(const ZMatrix& zm, const ModelParams& theta,
                             std::int64_t chunk_size = 65536, int threads = 1) {
  ComponentTable table(theta);
  return detail::estep(zm, table, chunk_size, threads, false).loglik;
}

struct EmStep {
  ModelParams params;   // updated parameters
  double loglik = 0.0;  // log-likelihood of the *input* parameters
  bool psd_repaired = false;
};

/// One modified EM update. The configuration masses get the exact EM update
/// (average posterior); mu0, Delta, Sigma get the approximate updates using
/// only the all-null and all-present posteriors. Delta is rescaled back to
/// unit diagonal and Sigma is repaired to positive semidefinite when needed.
inline EmStep em_iteration(const ZMatrix& zm, const ModelParams& theta,
                           const FitOptions& opts) {
  opts.check();
  const int k = theta.tissue_count();
  if (zm.tissue_count() != k)
    throw DataError("z matrix and model tissue counts differ");
  if (zm.pair_count() == 0) throw DataError("empty data");

  ComponentTable table(theta);
  const detail::EStepStats stats =
      detail::estep(zm, table, opts.chunk_size, opts.threads, true);

  // Configurations that carry no prior mass contribute no posterior weight,
  // so their approximate updates have nothing to average over; the affected
  // parameters stay put. A *positive* prior whose posterior total still
  // vanishes is a genuine numerical degeneracy.
  const bool null_active = theta.p(0) > 0.0;
  const bool full_active = theta.p(theta.config_count() - 1) > 0.0;
  if (null_active && (!(stats.weight0 > 0.0) || !std::isfinite(stats.weight0)))
    throw NumericalError(
        "degenerate posterior weight on the all-null configuration; "
        "re-initialize the fit");
  if (full_active && (!(stats.weight1 > 0.0) || !std::isfinite(stats.weight1)))
    throw NumericalError(
        "degenerate posterior weight on the all-present configuration; "
        "re-initialize the fit");

  EmStep step;
  step.loglik = stats.loglik;
  ModelParams& next = step.params;

  // Exact p update: average of per-pair posteriors. Dividing by the realized
  // posterior total (equal to N up to rounding) keeps the simplex sum exact.
  next.p = stats.posterior_sum / stats.posterior_sum.sum();

  if (null_active) {
    Eigen::MatrixXd delta_raw = stats.moment0 / stats.weight0;
    delta_raw = 0.5 * (delta_raw + delta_raw.transpose());
    const Eigen::VectorXd scale = delta_raw.diagonal().cwiseSqrt().cwiseInverse();
    if (!scale.allFinite())
      throw NumericalError("degenerate null second moment in Delta update");
    next.delta = scale.asDiagonal() * delta_raw * scale.asDiagonal();
    next.delta = 0.5 * (next.delta + next.delta.transpose().eval());
    next.delta.diagonal().setOnes();
  } else {
    next.delta = theta.delta;
  }

  if (opts.mu0_mode == FitOptions::Mu0Mode::kFree)
    next.mu0 = full_active ? (stats.sum1 / stats.weight1).eval() : theta.mu0;
  else
    next.mu0 = Eigen::VectorXd::Zero(k);

  if (full_active) {
    // Weighted second moment about mu0, assembled from raw moments.
    Eigen::MatrixXd moment1_centered =
        stats.moment1 - next.mu0 * stats.sum1.transpose() -
        stats.sum1 * next.mu0.transpose() +
        stats.weight1 * next.mu0 * next.mu0.transpose();
    moment1_centered /= stats.weight1;
    Eigen::MatrixXd sigma_raw = moment1_centered - next.delta;
    sigma_raw = 0.5 * (sigma_raw + sigma_raw.transpose());
    next.sigma = psd_project(sigma_raw, &step.psd_repaired);
  } else {
    next.sigma = theta.sigma;
  }
  return step;
}

/// Default initialization: Delta from the sample correlation of pairs with
/// all |z| below 2, Sigma from the excess covariance of pairs with some
/// |z| >= 4, mass mostly on the all-null configuration. An explicit starting
/// point in the options is validated and returned verbatim.
inline ModelParams init_params(const ZMatrix& zm, const FitOptions& opts) {
  opts.check();
  const std::int64_t n = zm.pair_count();
  if (n == 0) throw DataError("empty data");
  const int k = zm.tissue_count();

  if (opts.init) {
    require_valid(*opts.init);
    if (opts.init->tissue_count() != k)
      throw DataError("initial model tissue count does not match data");
    return *opts.init;
  }

  std::vector<std::int64_t> null_like, tail_like;
  for (std::int64_t j = 0; j < n; ++j) {
    const double amax = zm.z.col(j).cwiseAbs().maxCoeff();
    if (amax < 2.0) null_like.push_back(j);
    if (amax >= 4.0) tail_like.push_back(j);
  }

  ModelParams init;
  init.mu0 = Eigen::VectorXd::Zero(k);

  init.delta = Eigen::MatrixXd::Identity(k, k);
  if (null_like.size() >= 100) {
    Eigen::MatrixXd sub(k, static_cast<std::int64_t>(null_like.size()));
    for (std::size_t t = 0; t < null_like.size(); ++t)
      sub.col(static_cast<std::int64_t>(t)) = zm.z.col(null_like[t]);
    const Eigen::MatrixXd centered = sub.colwise() - sub.rowwise().mean();
    Eigen::MatrixXd cov =
        centered * centered.transpose() / static_cast<double>(null_like.size() - 1);
    const Eigen::VectorXd scale = cov.diagonal().cwiseSqrt().cwiseInverse();
    if (scale.allFinite()) {
      Eigen::MatrixXd corr = scale.asDiagonal() * cov * scale.asDiagonal();
      corr = 0.5 * (corr + corr.transpose().eval());
      corr.diagonal().setOnes();
      if (Eigen::LLT<Eigen::MatrixXd>(corr).info() == Eigen::Success)
        init.delta = corr;
    }
  }

  init.sigma = 4.0 * Eigen::MatrixXd::Identity(k, k);
  if (tail_like.size() >= 100) {
    Eigen::MatrixXd sub(k, static_cast<std::int64_t>(tail_like.size()));
    for (std::size_t t = 0; t < tail_like.size(); ++t)
      sub.col(static_cast<std::int64_t>(t)) = zm.z.col(tail_like[t]);
    const Eigen::MatrixXd centered = sub.colwise() - sub.rowwise().mean();
    Eigen::MatrixXd cov =
        centered * centered.transpose() / static_cast<double>(tail_like.size() - 1);
    Eigen::MatrixXd excess = cov - init.delta;
    excess = 0.5 * (excess + excess.transpose().eval());
    init.sigma = psd_project(excess);
  }

  const std::int64_t configs = std::int64_t{1} << k;
  init.p = Eigen::VectorXd::Zero(configs);
  init.p(configs - 1) = configs > 2 ? 0.1 : 0.2;
  if (configs > 2) {
    const double rest = 0.1 / static_cast<double>(configs - 2);
    for (std::int64_t g = 1; g < configs - 1; ++g) init.p(g) = rest;
  }
  init.p(0) = 1.0 - init.p.tail(configs - 1).sum();
  require_valid(init);
  return init;
}

/// Runs modified EM updates until the log-likelihood change between
/// consecutive iterates falls below the threshold or the iteration cap is
/// reached. Each accepted update costs one data pass; detecting convergence
/// costs one additional pass (its discarded update is not counted).
inline std::pair<ModelParams, FitTrace> fit(const ZMatrix& zm, const FitOptions& opts) {
  opts.check();
  ModelParams theta = init_params(zm, opts);
  FitTrace trace;
  double prev_loglik = std::numeric_limits<double>::quiet_NaN();
  for (int t = 0; t < opts.max_iter + 1; ++t) {
    EmStep step = em_iteration(zm, theta, opts);
    trace.loglik.push_back(step.loglik);
    if (!std::isfinite(step.loglik)) {
      trace.termination = "aborted:non-finite-likelihood";
      return {theta, trace};
    }
    if (t > 0 && std::abs(step.loglik - prev_loglik) < opts.tol) {
      trace.termination = "converged";
      return {theta, trace};
    }
    if (t == opts.max_iter) break;  // cap reached; last probe not applied
    prev_loglik = step.loglik;
    theta = std::move(step.params);
    trace.iterations = t + 1;
    trace.psd_repairs += step.psd_repaired ? 1 : 0;
    if (opts.record_params) trace.params.push_back(theta);
  }
  trace.termination = "max_iter";
  return {theta, trace};
}

}  // namespace mteqtl
