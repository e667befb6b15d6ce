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
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mteqtl/common.hpp"
#include "mteqtl/model.hpp"
#include "mteqtl/zmatrix.hpp"

namespace mteqtl {

namespace detail {

/// Splits the posterior mass between a selected set of configurations and
/// its complement, normalizing by their joint total so the two shares sum
/// to one. `in_null` marks the configurations whose mass counts as null.
template <typename Predicate>
double posterior_null_share(const ComponentTable& table, const Eigen::VectorXd& z,
                            Predicate in_null) {
  const std::uint32_t configs = table.size();
  const Eigen::VectorXd& logp = table.log_weights();
  Eigen::VectorXd logterm(configs);
  for (std::uint32_t g = 0; g < configs; ++g)
    logterm(g) = table.component_ok(g) && std::isfinite(logp(g))
                     ? logp(g) + table.log_component_density(z, Configuration{g})
                     : -std::numeric_limits<double>::infinity();
  const double m = logterm.maxCoeff();
  double null_mass = 0.0, alt_mass = 0.0;
  for (std::uint32_t g = 0; g < configs; ++g) {
    const double w = std::exp(logterm(g) - m);
    (in_null(g) ? null_mass : alt_mass) += w;
  }
  return null_mass / (null_mass + alt_mass);
}

}  // namespace detail

/// Local false discovery rate: posterior probability of the all-null
/// configuration given z.
inline double lfdr(const Eigen::VectorXd& z, const ModelParams& theta) {
  ComponentTable table(theta);
  return detail::posterior_null_share(table, z,
                                      [](std::uint32_t g) { return g == 0; });
}

/// Marginal local FDR for a tissue subset: posterior probability that the
/// configuration restricted to the subset is all-null. Uses the full model
/// and the complete z vector.
inline double marginal_lfdr(const Eigen::VectorXd& z, const ModelParams& theta,
                            std::span<const int> subset) {
  detail::check_subset(subset, theta.tissue_count());
  std::uint32_t subset_mask = 0;
  for (int k : subset) subset_mask |= (1u << k);
  ComponentTable table(theta);
  return detail::posterior_null_share(
      table, z, [subset_mask](std::uint32_t g) { return (g & subset_mask) == 0; });
}

/// Posterior probability that the configuration lies outside the tested
/// family T. With T = all nonzero configurations this is the plain lfdr.
inline double config_set_lfdr(const Eigen::VectorXd& z, const ModelParams& theta,
                              const std::vector<Configuration>& family) {
  const std::uint32_t configs = theta.config_count();
  std::vector<char> in_family(configs, 0);
  for (Configuration c : family) {
    if (c.mask >= configs)
      throw DataError("configuration outside model in family");
    in_family[c.mask] = 1;
  }
  const std::size_t members =
      static_cast<std::size_t>(std::count(in_family.begin(), in_family.end(), 1));
  if (members == 0) throw DataError("invalid family: empty");
  if (members == configs) throw DataError("invalid family: covers all configurations");
  ComponentTable table(theta);
  return detail::posterior_null_share(
      table, z, [&in_family](std::uint32_t g) { return !in_family[g]; });
}

/// Marginal posterior probability of an eQTL in tissue k.
inline double tissue_posterior(const Eigen::VectorXd& z, const ModelParams& theta,
                               int k) {
  if (k < 0 || k >= theta.tissue_count())
    throw DataError("tissue index outside panel");
  ComponentTable table(theta);
  return detail::posterior_null_share(
      table, z, [k](std::uint32_t g) { return (g >> k) & 1u; });
}

namespace detail {

/// MAP over nonzero configurations from precomputed weighted log densities;
/// ties resolve to the smallest mask.
inline std::uint32_t map_from_logterms(const Eigen::VectorXd& logterm) {
  std::uint32_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::int64_t g = 1; g < logterm.size(); ++g)
    if (logterm(g) > best_val) {
      best_val = logterm(g);
      best = static_cast<std::uint32_t>(g);
    }
  if (!std::isfinite(best_val))
    throw NumericalError("no alternative configuration has positive mass");
  return best;
}

}  // namespace detail

/// Most probable nonzero configuration given z.
inline Configuration map_configuration(const Eigen::VectorXd& z,
                                       const ModelParams& theta) {
  ComponentTable table(theta);
  const std::uint32_t configs = table.size();
  const Eigen::VectorXd& logp = table.log_weights();
  Eigen::VectorXd logterm(configs);
  for (std::uint32_t g = 0; g < configs; ++g)
    logterm(g) = table.component_ok(g) && std::isfinite(logp(g))
                     ? logp(g) + table.log_component_density(z, Configuration{g})
                     : -std::numeric_limits<double>::infinity();
  return Configuration{detail::map_from_logterms(logterm)};
}

struct StepUpResult {
  std::int64_t rejected_count = 0;
  std::vector<char> rejected;  // one flag per input position
};

/// Step-up rule on local FDRs: sort ascending (ties by original index),
/// find the largest prefix whose mean stays at or below alpha, reject it.
inline StepUpResult stepup_reject(std::span<const double> etas, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must be in (0, 1)");
  const std::int64_t n = static_cast<std::int64_t>(etas.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return etas[static_cast<std::size_t>(a)] != etas[static_cast<std::size_t>(b)]
               ? etas[static_cast<std::size_t>(a)] < etas[static_cast<std::size_t>(b)]
               : a < b;
  });
  long double running = 0.0L;
  std::int64_t cutoff = 0;
  for (std::int64_t l = 0; l < n; ++l) {
    running += etas[static_cast<std::size_t>(order[static_cast<std::size_t>(l)])];
    if (running / static_cast<long double>(l + 1) <= alpha) cutoff = l + 1;
  }
  StepUpResult out;
  out.rejected_count = cutoff;
  out.rejected.assign(static_cast<std::size_t>(n), 0);
  for (std::int64_t l = 0; l < cutoff; ++l)
    out.rejected[static_cast<std::size_t>(order[static_cast<std::size_t>(l)])] = 1;
  return out;
}

struct InferenceOptions {
  double alpha = 0.05;
  std::vector<int> subset;   // empty: test against the all-null configuration
  bool map_all = false;      // MAP + posteriors for every pair, not just rejected
  std::int64_t chunk_size = 65536;
  int threads = 1;
};

/// Per-pair inference output. MAP configurations and tissue posteriors are
/// stored only for pairs with detail (rejected pairs, or all pairs when
/// requested); detail_col maps a pair to its column, -1 when absent.
struct InferenceResult {
  std::vector<double> lfdr;                 // N
  std::vector<char> rejected;               // N
  std::int64_t rejected_count = 0;
  std::vector<std::int64_t> detail_col;     // N
  std::vector<Configuration> map_config;    // per detail column
  Eigen::MatrixXd tissue_posteriors;        // K x detail count

  std::int64_t pair_count() const { return static_cast<std::int64_t>(lfdr.size()); }
};

/// Full detection pass: local FDR (or its subset marginal) per pair, the
/// step-up rejection rule, then MAP configurations and per-tissue posteriors
/// for the selected pairs.
inline InferenceResult run_inference(const ZMatrix& zm, const ModelParams& theta,
                                     const InferenceOptions& opts) {
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0))
    throw DataError("alpha must be in (0, 1)");
  if (zm.tissue_count() != theta.tissue_count())
    throw DataError("z matrix and model tissue counts differ");
  std::uint32_t null_mask_filter = 0;  // configurations with (g & filter) == 0 are null
  if (!opts.subset.empty()) {
    detail::check_subset(opts.subset, theta.tissue_count());
    for (int k : opts.subset) null_mask_filter |= (1u << k);
  } else {
    null_mask_filter = (theta.config_count() - 1);
  }

  const ComponentTable table(theta);
  const int k = theta.tissue_count();
  const std::uint32_t configs = table.size();
  const std::int64_t n = zm.pair_count();
  const Eigen::VectorXd& logp = table.log_weights();

  InferenceResult result;
  result.lfdr.resize(static_cast<std::size_t>(n));

  const std::int64_t chunk = std::max<std::int64_t>(opts.chunk_size, 1);
  const std::int64_t chunks = (n + chunk - 1) / chunk;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(opts.threads)
#endif
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t start = c * chunk;
    const std::int64_t cols = std::min(chunk, n - start);
    const std::int64_t block = detail::block_columns(k, configs);
    Eigen::MatrixXd logf(configs, std::min(block, cols));
    for (std::int64_t b = start; b < start + cols; b += block) {
      const std::int64_t bc = std::min(block, start + cols - b);
      auto lf = logf.leftCols(bc);
      table.log_densities(zm.z.middleCols(b, bc), lf);
      lf.colwise() += logp;
      for (std::int64_t j = 0; j < bc; ++j) {
        const double m = lf.col(j).maxCoeff();
        double null_mass = 0.0, alt_mass = 0.0;
        for (std::uint32_t g = 0; g < configs; ++g) {
          const double w = std::exp(lf(g, j) - m);
          ((g & null_mask_filter) == 0 ? null_mass : alt_mass) += w;
        }
        result.lfdr[static_cast<std::size_t>(b + j)] =
            null_mass / (null_mass + alt_mass);
      }
    }
  }

  StepUpResult stepup = stepup_reject(result.lfdr, opts.alpha);
  result.rejected = std::move(stepup.rejected);
  result.rejected_count = stepup.rejected_count;

  // Detail pass: MAP configuration and per-tissue posteriors.
  result.detail_col.assign(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> detail_rows;
  for (std::int64_t j = 0; j < n; ++j)
    if (opts.map_all || result.rejected[static_cast<std::size_t>(j)]) {
      result.detail_col[static_cast<std::size_t>(j)] =
          static_cast<std::int64_t>(detail_rows.size());
      detail_rows.push_back(j);
    }
  const std::int64_t details = static_cast<std::int64_t>(detail_rows.size());
  result.map_config.resize(static_cast<std::size_t>(details));
  result.tissue_posteriors = Eigen::MatrixXd(k, details);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4096) num_threads(opts.threads)
#endif
  for (std::int64_t d = 0; d < details; ++d) {
    const std::int64_t j = detail_rows[static_cast<std::size_t>(d)];
    Eigen::VectorXd logterm(configs);
    for (std::uint32_t g = 0; g < configs; ++g)
      logterm(g) = table.component_ok(g) && std::isfinite(logp(g))
                       ? logp(g) + table.log_component_density(zm.z.col(j), Configuration{g})
                       : -std::numeric_limits<double>::infinity();
    result.map_config[static_cast<std::size_t>(d)] =
        Configuration{detail::map_from_logterms(logterm)};
    const double m = logterm.maxCoeff();
    Eigen::VectorXd post = (logterm.array() - m).exp();
    post /= post.sum();
    for (int t = 0; t < k; ++t) {
      double mass = 0.0;
      for (std::uint32_t g = 0; g < configs; ++g)
        if ((g >> t) & 1u) mass += post(g);
      result.tissue_posteriors(t, d) = std::min(1.0, mass);
    }
  }
  return result;
}

}  // namespace mteqtl
