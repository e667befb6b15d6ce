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
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mteqtl/common.hpp"
#include "mteqtl/normal.hpp"
#include "mteqtl/zmatrix.hpp"

namespace mteqtl {

struct SnpInfo {
  std::string id;
  std::string chrom;
  std::int64_t pos = 0;
};

struct GeneInfo {
  std::string id;
  std::string chrom;
  std::int64_t tss = 0;
};

/// SNPs by donors; entries are allele counts in {0, 1, 2} with NaN for
/// missing values until imputation fills them with row means.
struct GenotypeMatrix {
  std::vector<SnpInfo> snps;
  std::vector<std::string> donors;
  Eigen::MatrixXd values;  // m x n

  std::int64_t snp_count() const { return values.rows(); }
  std::int64_t donor_count() const { return values.cols(); }
};

/// Genes by donors for one tissue.
struct ExpressionMatrix {
  std::vector<GeneInfo> genes;
  std::vector<std::string> donors;
  Eigen::MatrixXd values;  // p x n_k

  std::int64_t gene_count() const { return values.rows(); }
  std::int64_t donor_count() const { return values.cols(); }
};

/// Local gene-SNP pairs: indices into the gene and SNP lists, gene-major,
/// SNPs ordered by position within a gene.
struct PairIndex {
  std::vector<std::pair<std::int32_t, std::int32_t>> pairs;  // (gene, snp)
  std::int64_t window = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(pairs.size()); }
};

struct GenotypeFilterReport {
  std::int64_t imputed_entries = 0;
  std::int64_t dropped_low_maf = 0;
  std::int64_t dropped_all_missing = 0;
};

/// Fills missing entries with the row mean of observed entries, then drops
/// SNPs whose minor allele frequency (computed before imputation) is below
/// maf_min. Rows with no observed entries are dropped and counted.
inline GenotypeMatrix impute_and_filter_genotypes(const GenotypeMatrix& geno,
                                                  double maf_min,
                                                  GenotypeFilterReport* report = nullptr) {
  if (maf_min < 0.0 || maf_min > 0.5)
    throw DataError("maf_min must be in [0, 0.5]");
  GenotypeFilterReport rep;
  const std::int64_t m = geno.snp_count();
  const std::int64_t n = geno.donor_count();
  std::vector<std::int64_t> keep;
  keep.reserve(static_cast<std::size_t>(m));
  Eigen::VectorXd row_mean(m);
  for (std::int64_t i = 0; i < m; ++i) {
    double sum = 0.0;
    std::int64_t observed = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double v = geno.values(i, j);
      if (std::isnan(v)) continue;
      sum += v;
      ++observed;
    }
    if (observed == 0) {
      ++rep.dropped_all_missing;
      continue;
    }
    const double freq = sum / (2.0 * static_cast<double>(observed));
    const double maf = std::min(freq, 1.0 - freq);
    if (maf < maf_min) {
      ++rep.dropped_low_maf;
      continue;
    }
    row_mean(i) = sum / static_cast<double>(observed);
    keep.push_back(i);
  }
  GenotypeMatrix out;
  out.donors = geno.donors;
  out.values = Eigen::MatrixXd(static_cast<std::int64_t>(keep.size()), n);
  out.snps.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const std::int64_t i = keep[r];
    out.snps.push_back(geno.snps[static_cast<std::size_t>(i)]);
    for (std::int64_t j = 0; j < n; ++j) {
      const double v = geno.values(i, j);
      if (std::isnan(v)) {
        out.values(static_cast<std::int64_t>(r), j) = row_mean(i);
        ++rep.imputed_entries;
      } else {
        out.values(static_cast<std::int64_t>(r), j) = v;
      }
    }
  }
  if (report) *report = rep;
  return out;
}

/// Enumerates gene-SNP pairs on the same chromosome with |snp - tss| within
/// the window (boundary inclusive). Genes keep their input order; SNPs are
/// ordered by position, then input index.
inline PairIndex cis_pairs(const std::vector<GeneInfo>& genes,
                           const std::vector<SnpInfo>& snps,
                           std::int64_t window) {
  if (window < 0) throw DataError("window must be nonnegative");
  PairIndex out;
  out.window = window;
  // Per-chromosome SNP index sorted by (position, input index).
  struct Entry {
    std::int64_t pos;
    std::int32_t idx;
  };
  std::vector<std::pair<std::string, std::vector<Entry>>> by_chrom;
  auto chrom_entries = [&](const std::string& chrom) -> std::vector<Entry>* {
    for (auto& [name, entries] : by_chrom)
      if (name == chrom) return &entries;
    return nullptr;
  };
  for (std::size_t j = 0; j < snps.size(); ++j) {
    auto* entries = chrom_entries(snps[j].chrom);
    if (!entries) {
      by_chrom.push_back({snps[j].chrom, {}});
      entries = &by_chrom.back().second;
    }
    entries->push_back({snps[j].pos, static_cast<std::int32_t>(j)});
  }
  for (auto& [name, entries] : by_chrom)
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.pos != b.pos ? a.pos < b.pos : a.idx < b.idx;
    });

  for (std::size_t i = 0; i < genes.size(); ++i) {
    const auto* entries = chrom_entries(genes[i].chrom);
    if (!entries) continue;
    const std::int64_t lo = genes[i].tss - window;
    const std::int64_t hi = genes[i].tss + window;
    auto first = std::lower_bound(entries->begin(), entries->end(), lo,
                                  [](const Entry& e, std::int64_t v) { return e.pos < v; });
    for (auto it = first; it != entries->end() && it->pos <= hi; ++it)
      out.pairs.push_back({static_cast<std::int32_t>(i), it->idx});
  }
  return out;
}

/// Removes the least-squares projection of each column of `mat` onto the
/// span of an intercept and the covariate columns. Throws if the augmented
/// covariate matrix is column rank deficient, naming the first dependent
/// column (0 = intercept, 1.. = covariates in input order).
inline Eigen::MatrixXd residualize(const Eigen::MatrixXd& mat,
                                   const Eigen::MatrixXd& covariates) {
  const std::int64_t n = mat.rows();
  if (covariates.rows() != 0 && covariates.rows() != n)
    throw DataError("covariates have " + std::to_string(covariates.rows()) +
                    " rows, expected " + std::to_string(n));
  Eigen::MatrixXd design(n, 1 + covariates.cols());
  design.col(0).setOnes();
  if (covariates.cols() > 0) design.rightCols(covariates.cols()) = covariates;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) {
    // Identify the first column dependent on its predecessors.
    for (std::int64_t c = 1; c < design.cols(); ++c) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> sub(design.leftCols(c + 1));
      if (sub.rank() < c + 1)
        throw DataError("covariate column " + std::to_string(c) +
                        " is linearly dependent on preceding columns");
    }
    throw DataError("covariates are rank deficient");
  }
  const Eigen::MatrixXd thin_q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(design).householderQ() *
      Eigen::MatrixXd::Identity(n, design.cols());
  return mat - thin_q * (thin_q.transpose() * mat);
}

/// Rank transform with average ranks for ties, mapped through the standard
/// normal quantile at rank / (n + 1).
inline std::vector<double> inverse_quantile_normalize(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw DataError("inverse quantile normalization needs n >= 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    // Average 1-based rank over the tie block [i, j].
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double score = norm_quantile(rank / static_cast<double>(n + 1));
    for (std::size_t t = i; t <= j; ++t) out[order[t]] = score;
    i = j + 1;
  }
  return out;
}

struct CorrelationReport {
  std::int64_t undefined_pairs = 0;
};

/// Pearson correlation per pair over the tissue's donors. Expression and
/// genotype must already be aligned to the same donor columns. Pairs with a
/// zero-variance gene or SNP get NaN and are counted.
inline std::vector<double> correlations(const Eigen::MatrixXd& expr,
                                        const Eigen::MatrixXd& geno,
                                        const PairIndex& pairs,
                                        CorrelationReport* report = nullptr) {
  if (expr.cols() != geno.cols())
    throw DataError("expression and genotype donor counts differ");
  if (expr.cols() < 2) throw DataError("correlation needs at least 2 donors");
  const std::int64_t n = expr.cols();
  // Center once per row.
  const Eigen::MatrixXd ec = expr.colwise() - expr.rowwise().mean();
  const Eigen::MatrixXd gc = geno.colwise() - geno.rowwise().mean();
  const Eigen::VectorXd enorm = ec.rowwise().norm();
  const Eigen::VectorXd gnorm = gc.rowwise().norm();
  CorrelationReport rep;
  std::vector<double> out(static_cast<std::size_t>(pairs.size()));
  for (std::size_t t = 0; t < out.size(); ++t) {
    const auto [gi, sj] = pairs.pairs[t];
    if (gi < 0 || gi >= expr.rows() || sj < 0 || sj >= geno.rows())
      throw DataError("pair index out of range");
    const double denom = enorm(gi) * gnorm(sj);
    if (denom == 0.0) {
      out[t] = std::numeric_limits<double>::quiet_NaN();
      ++rep.undefined_pairs;
      continue;
    }
    double r = ec.row(gi).dot(gc.row(sj)) / denom;
    out[t] = std::clamp(r, -1.0, 1.0);
  }
  (void)n;
  if (report) *report = rep;
  return out;
}

/// Correlation from a t statistic with d degrees of freedom.
inline double t_to_r(double t, double d) {
  if (d <= 0.0) throw DataError("degrees of freedom must be positive");
  return t / std::sqrt(d + t * t);
}

/// Fisher transformation h(r) = atanh(r). Inputs at or beyond |r| = 1 are
/// clamped to 1 - 1e-12 in magnitude and counted, so a perfect sample
/// correlation cannot inject an infinity into downstream fitting.
inline double fisher_z(double r, std::int64_t* clamp_count = nullptr) {
  constexpr double kLimit = 1.0 - 1e-12;
  if (r > kLimit || r < -kLimit) {
    if (clamp_count) ++*clamp_count;
    r = std::clamp(r, -kLimit, kLimit);
  }
  return std::atanh(r);
}

struct AssembleReport {
  std::int64_t clamped = 0;
};

/// z_{pair,k} = sqrt(d_k - 3) * h(r_{pair,k}); correlations arrive with one
/// pair per column (K x N), matching ZMatrix storage.
inline ZMatrix assemble_zmatrix(const Eigen::MatrixXd& correlations_kxn,
                                const TissuePanel& panel,
                                std::vector<PairId> ids = {},
                                AssembleReport* report = nullptr) {
  const auto bad = panel.validate();
  if (!bad.empty()) {
    std::string msg = "invalid panel:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  if (correlations_kxn.rows() != panel.tissue_count())
    throw DataError("correlation matrix has " + std::to_string(correlations_kxn.rows()) +
                    " rows, panel has " + std::to_string(panel.tissue_count()) +
                    " tissues");
  AssembleReport rep;
  ZMatrix zm;
  zm.panel = panel;
  zm.ids = std::move(ids);
  zm.z = Eigen::MatrixXd(correlations_kxn.rows(), correlations_kxn.cols());
  for (int k = 0; k < panel.tissue_count(); ++k) {
    const double scale = std::sqrt(static_cast<double>(panel.dof[k]) - 3.0);
    for (std::int64_t j = 0; j < correlations_kxn.cols(); ++j)
      zm.z(k, j) = scale * fisher_z(correlations_kxn(k, j), &rep.clamped);
  }
  if (report) *report = rep;
  return zm;
}

}  // namespace mteqtl
