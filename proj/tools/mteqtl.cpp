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

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mteqtl/mteqtl.hpp"

namespace {

using namespace mteqtl;

struct CommonOpts {
  int threads = 1;
  std::int64_t chunk_size = 65536;
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--threads", opts->threads, "Worker threads")->default_val(1);
  cmd->add_option("--chunk-size", opts->chunk_size, "Rows per processing chunk")
      ->default_val(65536);
}

std::vector<int> parse_subset(const std::string& spec, const TissuePanel& panel) {
  std::vector<int> subset;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string token =
        spec.substr(start, comma == std::string::npos ? comma : comma - start);
    if (token.empty()) throw DataError("empty tissue name in subset '" + spec + "'");
    if (std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      std::string names;
      for (const auto& n : panel.names) names += (names.empty() ? "" : ", ") + n;
      throw DataError("subsets use tissue names, not indices; panel names are: " + names);
    }
    const int idx = panel.index_of(token);
    if (idx < 0) {
      std::string names;
      for (const auto& n : panel.names) names += (names.empty() ? "" : ", ") + n;
      throw DataError("unknown tissue '" + token + "'; panel names are: " + names);
    }
    subset.push_back(idx);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  return subset;
}

void check_panels_match(const TissuePanel& model_panel, const TissuePanel& data_panel) {
  if (model_panel.names != data_panel.names)
    throw DataError("model and data tissue panels differ");
}

std::uint64_t choose_seed(std::optional<std::uint64_t> seed) {
  if (seed) return *seed;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

// ---------------------------------------------------------------------------
// compute-z
// ---------------------------------------------------------------------------

struct ComputeZArgs {
  CommonOpts common;
  // Precomputed-statistics entry point.
  std::string stats_path;
  // Raw pipeline.
  std::string genotype_path, snp_pos_path, tss_path;
  std::vector<std::string> expression_specs;  // name=path
  std::vector<std::string> covariate_specs;   // name=path
  std::int64_t window = 1000000;
  double maf_min = 0.05;
  bool no_iqn = false;
  std::vector<int> dof;
  std::vector<std::string> tissue_names;
  std::string out_path;
};

std::pair<std::string, std::string> split_spec(const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw DataError("expected name=path, got '" + spec + "'");
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

int run_compute_z_stats(const ComputeZArgs& args) {
  const io::StatsTable table = io::read_stats_tsv(args.stats_path);
  const int k = static_cast<int>(table.tissues.size());
  TissuePanel panel;
  panel.names = args.tissue_names.empty() ? table.tissues : args.tissue_names;
  panel.dof = args.dof;
  if (static_cast<int>(panel.names.size()) != k)
    throw DataError("tissue name count does not match statistic columns");
  if (static_cast<int>(panel.dof.size()) != k)
    throw DataError("--dof needs one value per tissue (" + std::to_string(k) + ")");

  Eigen::MatrixXd r = table.values;
  if (table.is_t)
    for (int t = 0; t < k; ++t)
      for (std::int64_t j = 0; j < r.cols(); ++j)
        r(t, j) = t_to_r(r(t, j), static_cast<double>(panel.dof[static_cast<std::size_t>(t)]));

  AssembleReport report;
  const ZMatrix zm = assemble_zmatrix(r, panel, table.ids, &report);
  io::write_zmatrix(args.out_path, zm);
  std::cerr << "pairs: " << zm.pair_count() << "\n"
            << "clamped correlations: " << report.clamped << "\n"
            << "dropped SNPs: 0\n"
            << "dropped pairs: 0\n";
  return kExitOk;
}

int run_compute_z_raw(const ComputeZArgs& args) {
  if (args.snp_pos_path.empty() || args.tss_path.empty())
    throw DataError("raw mode needs --snp-pos and --tss");
  if (args.expression_specs.empty())
    throw DataError("raw mode needs at least one --expression name=path");
  const int k = static_cast<int>(args.expression_specs.size());
  if (static_cast<int>(args.dof.size()) != k)
    throw DataError("--dof needs one value per tissue (" + std::to_string(k) + ")");

  GenotypeFilterReport geno_report;
  const GenotypeMatrix geno = impute_and_filter_genotypes(
      io::read_genotype_tsv(args.genotype_path, args.snp_pos_path), args.maf_min,
      &geno_report);
  auto donor_index = [&](const std::string& donor) {
    for (std::size_t j = 0; j < geno.donors.size(); ++j)
      if (geno.donors[j] == donor) return static_cast<std::int64_t>(j);
    throw DataError("donor " + donor + " missing from genotype data");
  };

  TissuePanel panel;
  panel.dof = args.dof;
  std::vector<ExpressionMatrix> expressions;
  std::vector<std::string> covariate_paths(static_cast<std::size_t>(k));
  for (const auto& spec : args.expression_specs) {
    const auto [name, path] = split_spec(spec);
    panel.names.push_back(name);
    expressions.push_back(io::read_expression_tsv(path, args.tss_path));
  }
  for (const auto& spec : args.covariate_specs) {
    const auto [name, path] = split_spec(spec);
    const int idx = panel.index_of(name);
    if (idx < 0) throw DataError("covariates given for unknown tissue " + name);
    covariate_paths[static_cast<std::size_t>(idx)] = path;
  }
  for (int t = 1; t < k; ++t) {
    if (expressions[static_cast<std::size_t>(t)].genes.size() !=
        expressions[0].genes.size())
      throw DataError("expression files must cover the same genes");
    for (std::size_t i = 0; i < expressions[0].genes.size(); ++i)
      if (expressions[static_cast<std::size_t>(t)].genes[i].id !=
          expressions[0].genes[i].id)
        throw DataError("expression files must list genes in the same order");
  }

  const PairIndex pairs = cis_pairs(expressions[0].genes, geno.snps, args.window);

  Eigen::MatrixXd r(k, pairs.size());
  std::int64_t undefined = 0;
  for (int t = 0; t < k; ++t) {
    ExpressionMatrix& expr = expressions[static_cast<std::size_t>(t)];
    // Genotype columns for this tissue's donors, in the tissue's order.
    Eigen::MatrixXd geno_t(geno.snp_count(), expr.donor_count());
    for (std::int64_t j = 0; j < expr.donor_count(); ++j)
      geno_t.col(j) = geno.values.col(donor_index(expr.donors[static_cast<std::size_t>(j)]));

    if (!args.no_iqn) {
      for (std::int64_t g = 0; g < expr.gene_count(); ++g) {
        const Eigen::VectorXd row = expr.values.row(g);
        const auto normalized =
            inverse_quantile_normalize(std::span<const double>(row.data(), row.size()));
        for (std::int64_t j = 0; j < expr.donor_count(); ++j)
          expr.values(g, j) = normalized[static_cast<std::size_t>(j)];
      }
    }

    Eigen::MatrixXd covariates(expr.donor_count(), 0);
    if (!covariate_paths[static_cast<std::size_t>(t)].empty()) {
      const io::CovariateTable table =
          io::read_covariates_tsv(covariate_paths[static_cast<std::size_t>(t)]);
      covariates = Eigen::MatrixXd(expr.donor_count(), table.values.cols());
      for (std::int64_t j = 0; j < expr.donor_count(); ++j) {
        const auto& donor = expr.donors[static_cast<std::size_t>(j)];
        std::int64_t found = -1;
        for (std::size_t d = 0; d < table.donors.size(); ++d)
          if (table.donors[d] == donor) found = static_cast<std::int64_t>(d);
        if (found < 0)
          throw DataError("covariates for tissue " + panel.names[static_cast<std::size_t>(t)] +
                          " miss donor " + donor);
        covariates.row(j) = table.values.row(found);
      }
    }

    const Eigen::MatrixXd expr_resid =
        residualize(expr.values.transpose(), covariates).transpose();
    const Eigen::MatrixXd geno_resid =
        residualize(geno_t.transpose(), covariates).transpose();

    CorrelationReport corr_report;
    const auto corr = correlations(expr_resid, geno_resid, pairs, &corr_report);
    undefined += corr_report.undefined_pairs;
    for (std::int64_t j = 0; j < pairs.size(); ++j)
      r(t, j) = corr[static_cast<std::size_t>(j)];
  }

  // Keep pairs with a defined correlation in every tissue.
  std::vector<std::int64_t> keep;
  for (std::int64_t j = 0; j < pairs.size(); ++j)
    if (!r.col(j).hasNaN()) keep.push_back(j);
  Eigen::MatrixXd r_kept(k, static_cast<std::int64_t>(keep.size()));
  std::vector<PairId> ids;
  ids.reserve(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    r_kept.col(static_cast<std::int64_t>(j)) = r.col(keep[j]);
    const auto [gi, sj] = pairs.pairs[static_cast<std::size_t>(keep[j])];
    ids.push_back({expressions[0].genes[static_cast<std::size_t>(gi)].id,
                   geno.snps[static_cast<std::size_t>(sj)].id});
  }

  AssembleReport report;
  const ZMatrix zm = assemble_zmatrix(r_kept, panel, std::move(ids), &report);
  io::write_zmatrix(args.out_path, zm);
  std::cerr << "pairs: " << zm.pair_count() << "\n"
            << "clamped correlations: " << report.clamped << "\n"
            << "dropped SNPs: " << geno_report.dropped_low_maf + geno_report.dropped_all_missing
            << " (low MAF " << geno_report.dropped_low_maf << ", all missing "
            << geno_report.dropped_all_missing << ")\n"
            << "dropped pairs: " << pairs.size() - zm.pair_count() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Remaining commands
// ---------------------------------------------------------------------------

struct FitArgs {
  CommonOpts common;
  std::string data_path, out_path, trace_path, init_path, mu0_mode = "zero";
  double tol = 0.01;
  int max_iter = 1000;
  std::optional<std::uint64_t> seed;
};

int run_fit(const FitArgs& args) {
  const ZMatrix zm = io::read_zmatrix(args.data_path);
  FitOptions opts;
  opts.tol = args.tol;
  opts.max_iter = args.max_iter;
  opts.chunk_size = args.common.chunk_size;
  opts.threads = args.common.threads;
  opts.seed = args.seed.value_or(0);
  if (args.mu0_mode == "zero")
    opts.mu0_mode = FitOptions::Mu0Mode::kFixedZero;
  else if (args.mu0_mode == "free")
    opts.mu0_mode = FitOptions::Mu0Mode::kFree;
  else
    throw DataError("--mu0 must be 'zero' or 'free'");
  if (!args.init_path.empty()) opts.init = io::read_model(args.init_path).params;

  const auto [theta, trace] = fit(zm, opts);
  io::write_model(args.out_path, Model{zm.panel, theta});
  if (!args.trace_path.empty()) io::write_trace_tsv(args.trace_path, trace);
  std::cerr << "iterations: " << trace.iterations << "\n"
            << "termination: " << trace.termination << "\n"
            << "psd repairs: " << trace.psd_repairs << "\n";
  if (!trace.loglik.empty())
    std::cerr << "final loglik: " << trace.loglik.back() << "\n";
  if (trace.termination != "converged") {
    std::cerr << "error: fit did not converge\n";
    return kExitNumeric;
  }
  return kExitOk;
}

struct InferArgs {
  CommonOpts common;
  std::string model_path, data_path, out_path, subset_spec, classified_path;
  double alpha = 0.05;
  bool map_all = false;
};

int run_infer(const InferArgs& args) {
  const Model model = io::read_model(args.model_path);
  const ZMatrix zm = io::read_zmatrix(args.data_path);
  check_panels_match(model.panel, zm.panel);

  InferenceOptions opts;
  opts.alpha = args.alpha;
  opts.map_all = args.map_all;
  opts.chunk_size = args.common.chunk_size;
  opts.threads = args.common.threads;
  if (!args.subset_spec.empty()) opts.subset = parse_subset(args.subset_spec, zm.panel);

  const InferenceResult result = run_inference(zm, model.params, opts);
  io::write_results_tsv(args.out_path, zm, result);

  const int k = zm.tissue_count();
  std::vector<std::int64_t> histogram(model.params.config_count(), 0);
  for (std::int64_t j = 0; j < result.pair_count(); ++j)
    if (result.rejected[static_cast<std::size_t>(j)])
      ++histogram[result.map_config[static_cast<std::size_t>(
                                        result.detail_col[static_cast<std::size_t>(j)])]
                      .mask];
  std::cerr << "pairs: " << result.pair_count() << "\n"
            << "rejections: " << result.rejected_count << " ("
            << 100.0 * static_cast<double>(result.rejected_count) /
                   static_cast<double>(std::max<std::int64_t>(result.pair_count(), 1))
            << "%)\n";
  for (std::uint32_t g = 1; g < histogram.size(); ++g)
    if (histogram[g] > 0)
      std::cerr << "map " << Configuration{g}.to_string(k) << ": " << histogram[g] << "\n";

  if (!args.classified_path.empty()) {
    if (k != 2)
      throw DataError("--classified-out needs a two-tissue model");
    auto out = io::detail::open_out(args.classified_path);
    out << "z_1\tz_2\tclass\n";
    for (std::int64_t j = 0; j < result.pair_count(); ++j) {
      if (!result.rejected[static_cast<std::size_t>(j)]) continue;
      const std::uint32_t mask =
          result
              .map_config[static_cast<std::size_t>(
                  result.detail_col[static_cast<std::size_t>(j)])]
              .mask;
      const char* label = mask == 3 ? "both" : (mask == 1 ? "first-only" : "second-only");
      out << io::detail::format_double(zm.z(0, j)) << '\t'
          << io::detail::format_double(zm.z(1, j)) << '\t' << label << "\n";
    }
  }
  return kExitOk;
}

struct MarginalizeArgs {
  std::string model_path, subset_spec, out_path;
};

int run_marginalize(const MarginalizeArgs& args) {
  const Model model = io::read_model(args.model_path);
  const std::vector<int> subset = parse_subset(args.subset_spec, model.panel);
  Model out;
  out.panel = model.panel.subset(subset);
  out.params = marginalize_model(model.params, subset);
  io::write_model(args.out_path, out);
  std::cerr << "tissues: " << out.panel.tissue_count() << "\n";
  return kExitOk;
}

struct SimulateArgs {
  CommonOpts common;
  std::string model_path, out_path, truth_path;
  bool paper_scenario_flag = false;
  bool gtex_scenario_flag = false;
  std::int64_t pairs = 1000000;
  std::optional<std::uint64_t> seed;
};

int run_simulate(const SimulateArgs& args) {
  Model model;
  if (args.paper_scenario_flag)
    model = paper_scenario();
  else if (args.gtex_scenario_flag)
    model = gtex_scenario();
  else if (!args.model_path.empty())
    model = io::read_model(args.model_path);
  else
    throw DataError("simulate needs --model, --paper-scenario or --gtex-scenario");

  const std::uint64_t seed = choose_seed(args.seed);
  const SimulatedDataset data =
      sample_dataset(model, args.pairs, seed, args.common.threads);
  io::write_zmatrix(args.out_path, data.zm);
  const std::string truth_path =
      args.truth_path.empty() ? args.out_path + ".truth.tsv" : args.truth_path;
  io::write_truth_tsv(truth_path, data.configs, model.panel.tissue_count());

  nlohmann::json meta;
  meta["seed"] = seed;
  meta["rng"] = kRngVersion;
  meta["model_hash"] = io::model_hash(model);
  meta["pairs"] = args.pairs;
  meta["tissues"] = model.panel.tissue_count();
  auto meta_out = io::detail::open_out(args.out_path + ".meta.json");
  meta_out << meta.dump(2) << "\n";

  std::cerr << "pairs: " << args.pairs << "\nseed: " << seed << "\n";
  return kExitOk;
}

struct ScoreArgs {
  std::string truth_path, results_path, out_path;
};

int run_score(const ScoreArgs& args) {
  const std::vector<Configuration> truth = io::read_truth_tsv(args.truth_path);
  const io::ResultsSummary results = io::read_results_tsv(args.results_path);
  if (truth.size() != results.rejected.size())
    throw DataError("truth and results pair counts differ");
  // Rebuild the minimal inference view scoring needs.
  InferenceResult view;
  view.lfdr.assign(truth.size(), 0.0);
  view.rejected = results.rejected;
  view.detail_col.assign(truth.size(), -1);
  for (std::size_t j = 0; j < truth.size(); ++j)
    if (results.rejected[j]) {
      view.detail_col[j] = static_cast<std::int64_t>(view.map_config.size());
      view.map_config.push_back(results.map_config[j]);
      ++view.rejected_count;
    }
  int k = results.tissue_count;
  for (const Configuration c : truth)
    while (c.mask >= (std::uint32_t{1} << k)) ++k;

  const ScoreResult score = score_against_truth(truth, view, k);
  if (!args.out_path.empty()) io::write_confusion_tsv(args.out_path, score, k);
  std::cout << "rejections\t" << score.rejections << "\n"
            << "realized_fdr\t" << score.realized_fdr << "\n";
  return kExitOk;
}

struct QqArgs {
  std::string model_path, data_path, out_path;
  std::int64_t grid = 10000;
};

int run_qq(const QqArgs& args) {
  const Model model = io::read_model(args.model_path);
  const ZMatrix zm = io::read_zmatrix(args.data_path);
  check_panels_match(model.panel, zm.panel);
  const std::int64_t n = zm.pair_count();
  const std::int64_t points = std::min<std::int64_t>(n, args.grid);

  auto out = io::detail::open_out(args.out_path);
  out << "tissue\tprob\ttheoretical\tempirical\n";
  for (int k = 0; k < zm.tissue_count(); ++k) {
    const TissueMarginal marginal = marginal_tissue_mixture(model.params, k);
    std::vector<double> column(zm.z.row(k).data() ? static_cast<std::size_t>(n) : 0);
    for (std::int64_t j = 0; j < n; ++j)
      column[static_cast<std::size_t>(j)] = zm.z(k, j);
    std::sort(column.begin(), column.end());
    for (std::int64_t i = 0; i < points; ++i) {
      const double prob = (static_cast<double>(i) + 0.5) / static_cast<double>(points);
      const double theoretical = marginal.quantile(prob);
      const auto idx = static_cast<std::size_t>(
          std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(prob * static_cast<double>(n))));
      out << zm.panel.names[static_cast<std::size_t>(k)] << '\t'
          << io::detail::format_double(prob) << '\t'
          << io::detail::format_double(theoretical) << '\t'
          << io::detail::format_double(column[idx]) << "\n";
    }
  }
  std::cerr << "tissues: " << zm.tissue_count() << "\ngrid points: " << points << "\n";
  return kExitOk;
}

struct NestedArgs {
  CommonOpts common;
  std::string model_path, data_path, primary, order_spec, truth_path, out_path;
  double alpha = 0.05;
};

int run_nested_curve(const NestedArgs& args) {
  const Model model = io::read_model(args.model_path);
  const ZMatrix zm = io::read_zmatrix(args.data_path);
  check_panels_match(model.panel, zm.panel);

  const int primary = model.panel.index_of(args.primary);
  if (primary < 0) throw DataError("primary tissue '" + args.primary + "' not in panel");
  std::vector<int> order;
  if (args.order_spec.empty()) {
    order.resize(static_cast<std::size_t>(model.panel.tissue_count()));
    std::iota(order.begin(), order.end(), 0);
  } else {
    // Keep the user's order; parse_subset sorts, so resolve names directly.
    std::size_t start = 0;
    while (start <= args.order_spec.size()) {
      const std::size_t comma = args.order_spec.find(',', start);
      const std::string token = args.order_spec.substr(
          start, comma == std::string::npos ? comma : comma - start);
      const int idx = model.panel.index_of(token);
      if (idx < 0) throw DataError("unknown tissue '" + token + "' in --order");
      order.push_back(idx);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  if (std::find(order.begin(), order.end(), primary) == order.end())
    throw DataError("primary tissue must appear in --order");

  std::vector<Configuration> truth;
  if (!args.truth_path.empty()) {
    truth = io::read_truth_tsv(args.truth_path);
    if (static_cast<std::int64_t>(truth.size()) != zm.pair_count())
      throw DataError("truth and data pair counts differ");
  }

  auto out = io::detail::open_out(args.out_path);
  out << "dimension\tdiscoveries" << (truth.empty() ? "" : "\trealized_fdr") << "\n";
  for (std::size_t len = 1; len <= order.size(); ++len) {
    std::vector<int> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(len));
    if (std::find(subset.begin(), subset.end(), primary) == subset.end()) continue;
    std::sort(subset.begin(), subset.end());

    Model sub_model;
    sub_model.panel = model.panel.subset(subset);
    sub_model.params = marginalize_model(model.params, subset);

    ZMatrix sub_zm;
    sub_zm.panel = sub_model.panel;
    sub_zm.z = Eigen::MatrixXd(static_cast<std::int64_t>(len), zm.pair_count());
    for (std::size_t i = 0; i < subset.size(); ++i)
      sub_zm.z.row(static_cast<std::int64_t>(i)) =
          zm.z.row(subset[static_cast<std::size_t>(i)]);

    InferenceOptions opts;
    opts.alpha = args.alpha;
    opts.chunk_size = args.common.chunk_size;
    opts.threads = args.common.threads;
    const int primary_local = sub_model.panel.index_of(args.primary);
    opts.subset = {primary_local};

    const InferenceResult result = run_inference(sub_zm, sub_model.params, opts);
    out << len << '\t' << result.rejected_count;
    if (!truth.empty()) {
      std::int64_t false_rejections = 0;
      for (std::int64_t j = 0; j < result.pair_count(); ++j)
        if (result.rejected[static_cast<std::size_t>(j)] &&
            !truth[static_cast<std::size_t>(j)].has_tissue(primary))
          ++false_rejections;
      const double fdr = result.rejected_count == 0
                             ? 0.0
                             : static_cast<double>(false_rejections) /
                                   static_cast<double>(result.rejected_count);
      out << '\t' << io::detail::format_double(fdr);
    }
    out << "\n";
  }
  return kExitOk;
}

int run_validate_model(const std::string& path) {
  io::detail::LineReader reader(path);
  const Model model = io::model_from_lines(reader);
  auto bad = model.panel.validate();
  const auto param_bad = validate_model(model.params);
  bad.insert(bad.end(), param_bad.begin(), param_bad.end());
  if (model.panel.tissue_count() != model.params.tissue_count())
    bad.push_back("panel and parameter tissue counts differ");
  if (bad.empty()) {
    std::cout << "ok\n";
    return kExitOk;
  }
  for (const auto& b : bad) std::cout << "violation: " << b << "\n";
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-tissue eQTL mixture modeling toolkit"};
  app.require_subcommand(1);

  ComputeZArgs compute_args;
  CLI::App* compute = app.add_subcommand(
      "compute-z", "Build the z-statistic matrix from raw data or statistics");
  compute->add_option("--stats", compute_args.stats_path,
                      "Precomputed statistics TSV (gene, snp, t_*/r_* columns)");
  compute->add_option("--genotype", compute_args.genotype_path, "Genotype TSV");
  compute->add_option("--snp-pos", compute_args.snp_pos_path, "SNP positions TSV");
  compute->add_option("--tss", compute_args.tss_path, "Gene TSS TSV");
  compute->add_option("--expression", compute_args.expression_specs,
                      "Per-tissue expression, name=path (repeatable)");
  compute->add_option("--covariates", compute_args.covariate_specs,
                      "Per-tissue covariates, name=path (repeatable)");
  compute->add_option("--window", compute_args.window, "Cis window in basepairs")
      ->default_val(1000000);
  compute->add_option("--maf-min", compute_args.maf_min, "Minor allele frequency cutoff")
      ->default_val(0.05);
  compute->add_flag("--no-iqn", compute_args.no_iqn,
                    "Skip inverse quantile normalization of expression");
  compute->add_option("--dof", compute_args.dof,
                      "Degrees of freedom per tissue (required)")
      ->required();
  compute->add_option("--tissues", compute_args.tissue_names,
                      "Tissue names (stats mode; defaults to column names)");
  compute->add_option("--out", compute_args.out_path, "Output z-matrix file")->required();
  add_common(compute, &compute_args.common);

  FitArgs fit_args;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit model parameters by modified EM");
  fit_cmd->add_option("--data", fit_args.data_path, "Input z-matrix file")->required();
  fit_cmd->add_option("--out", fit_args.out_path, "Output model file")->required();
  fit_cmd->add_option("--trace", fit_args.trace_path, "Per-iteration trace TSV");
  fit_cmd->add_option("--tol", fit_args.tol, "Log-likelihood change threshold")
      ->default_val(0.01);
  fit_cmd->add_option("--max-iter", fit_args.max_iter, "Iteration cap")->default_val(1000);
  fit_cmd->add_option("--mu0", fit_args.mu0_mode, "Effect mean mode: zero or free")
      ->default_val("zero");
  fit_cmd->add_option("--init", fit_args.init_path, "Explicit starting model file");
  fit_cmd->add_option("--seed", fit_args.seed, "Seed for randomized initialization");
  add_common(fit_cmd, &fit_args.common);

  InferArgs infer_args;
  CLI::App* infer_cmd =
      app.add_subcommand("infer", "Detect eQTLs by local FDR step-up thresholding");
  infer_cmd->add_option("--model", infer_args.model_path, "Model file")->required();
  infer_cmd->add_option("--data", infer_args.data_path, "Input z-matrix file")->required();
  infer_cmd->add_option("--alpha", infer_args.alpha, "Target false discovery rate")
      ->default_val(0.05);
  infer_cmd->add_option("--subset", infer_args.subset_spec,
                        "Comma-separated tissue names for the marginal test");
  infer_cmd->add_option("--out", infer_args.out_path, "Results TSV")->required();
  infer_cmd->add_flag("--map-all", infer_args.map_all,
                      "Report MAP configuration and posteriors for every pair");
  infer_cmd->add_option("--classified-out", infer_args.classified_path,
                        "Two-tissue classified scatter table");
  add_common(infer_cmd, &infer_args.common);

  MarginalizeArgs marg_args;
  CLI::App* marg_cmd =
      app.add_subcommand("marginalize", "Restrict a model to a tissue subset");
  marg_cmd->add_option("--model", marg_args.model_path, "Model file")->required();
  marg_cmd->add_option("--subset", marg_args.subset_spec,
                       "Comma-separated tissue names to keep")
      ->required();
  marg_cmd->add_option("--out", marg_args.out_path, "Output model file")->required();

  SimulateArgs sim_args;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Sample synthetic data from a model");
  sim_cmd->add_option("--model", sim_args.model_path, "Model file");
  sim_cmd->add_flag("--paper-scenario", sim_args.paper_scenario_flag,
                    "Use the built-in four-tissue benchmark model");
  sim_cmd->add_flag("--gtex-scenario", sim_args.gtex_scenario_flag,
                    "Use the built-in nine-tissue reference model");
  sim_cmd->add_option("-n,--pairs", sim_args.pairs, "Number of gene-SNP pairs")
      ->default_val(1000000);
  sim_cmd->add_option("--seed", sim_args.seed,
                      "Generator seed (auto-generated and recorded when absent)");
  sim_cmd->add_option("--out", sim_args.out_path, "Output z-matrix file")->required();
  sim_cmd->add_option("--truth", sim_args.truth_path,
                      "Truth TSV path (default <out>.truth.tsv)");
  add_common(sim_cmd, &sim_args.common);

  ScoreArgs score_args;
  CLI::App* score_cmd =
      app.add_subcommand("score", "Score inference results against simulated truth");
  score_cmd->add_option("--truth", score_args.truth_path, "Truth TSV")->required();
  score_cmd->add_option("--results", score_args.results_path, "Results TSV")->required();
  score_cmd->add_option("--out", score_args.out_path, "Confusion table TSV");

  QqArgs qq_args;
  CLI::App* qq_cmd = app.add_subcommand(
      "qq", "Theoretical versus empirical marginal quantiles per tissue");
  qq_cmd->add_option("--model", qq_args.model_path, "Model file")->required();
  qq_cmd->add_option("--data", qq_args.data_path, "Input z-matrix file")->required();
  qq_cmd->add_option("--grid", qq_args.grid, "Maximum probability grid points")
      ->default_val(10000);
  qq_cmd->add_option("--out", qq_args.out_path, "Output TSV")->required();

  NestedArgs nested_args;
  CLI::App* nested_cmd = app.add_subcommand(
      "nested-curve", "Discovery counts for a primary tissue across nested models");
  nested_cmd->add_option("--model", nested_args.model_path, "Full model file")->required();
  nested_cmd->add_option("--data", nested_args.data_path, "Input z-matrix file")->required();
  nested_cmd->add_option("--primary", nested_args.primary, "Primary tissue name")->required();
  nested_cmd->add_option("--order", nested_args.order_spec,
                         "Comma-separated tissue order (default: panel order)");
  nested_cmd->add_option("--alpha", nested_args.alpha, "Target false discovery rate")
      ->default_val(0.05);
  nested_cmd->add_option("--truth", nested_args.truth_path,
                         "Truth TSV for realized FDR column");
  nested_cmd->add_option("--out", nested_args.out_path, "Output TSV")->required();
  add_common(nested_cmd, &nested_args.common);

  std::string validate_path;
  CLI::App* validate_cmd =
      app.add_subcommand("validate-model", "Check a model file against all invariants");
  validate_cmd->add_option("--model", validate_path, "Model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (compute->parsed())
      return compute_args.stats_path.empty() ? run_compute_z_raw(compute_args)
                                             : run_compute_z_stats(compute_args);
    if (fit_cmd->parsed()) return run_fit(fit_args);
    if (infer_cmd->parsed()) return run_infer(infer_args);
    if (marg_cmd->parsed()) return run_marginalize(marg_args);
    if (sim_cmd->parsed()) return run_simulate(sim_args);
    if (score_cmd->parsed()) return run_score(score_args);
    if (qq_cmd->parsed()) return run_qq(qq_args);
    if (nested_cmd->parsed()) return run_nested_curve(nested_args);
    if (validate_cmd->parsed()) return run_validate_model(validate_path);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
