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

#include "mteqtl/io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"

using namespace mteqtl;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("mteqtl_io_" + std::to_string(::testing::UnitTest::GetInstance()
                                              ->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }

  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
  }

  static std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  std::filesystem::path dir_;
};

using ModelIo = TempDir;
using ZMatrixIo = TempDir;
using TsvIo = TempDir;

Model random_model(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model model;
  model.params = oracle::random_theta(k, rng);
  for (int t = 0; t < k; ++t) {
    model.panel.names.push_back("tissue" + std::to_string(t + 1));
    model.panel.dof.push_back(50 + t);
  }
  return model;
}

ZMatrix random_zmatrix(int k, std::int64_t n, bool with_ids, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  ZMatrix zm;
  for (int t = 0; t < k; ++t) {
    zm.panel.names.push_back("t" + std::to_string(t + 1));
    zm.panel.dof.push_back(80 + t);
  }
  zm.z = Eigen::MatrixXd(k, n);
  for (int i = 0; i < zm.z.size(); ++i) zm.z(i) = normal(rng);
  if (with_ids)
    for (std::int64_t j = 0; j < n; ++j)
      zm.ids.push_back({"gene" + std::to_string(j % 7), "snp" + std::to_string(j)});
  return zm;
}

}  // namespace

TEST_F(ModelIo, WriteReadWriteIsByteIdentical) {
  const Model model = random_model(3, 101);
  io::write_model(path("m1.model"), model);
  const Model loaded = io::read_model(path("m1.model"));
  io::write_model(path("m2.model"), loaded);
  EXPECT_EQ(slurp(path("m1.model")), slurp(path("m2.model")));
  EXPECT_EQ(loaded.params.delta, model.params.delta);
  EXPECT_EQ(loaded.params.sigma, model.params.sigma);
  EXPECT_EQ(loaded.params.p, model.params.p);
  EXPECT_EQ(loaded.panel.names, model.panel.names);
}

TEST_F(ModelIo, RejectsInvalidSimplexWithDetail) {
  Model model = random_model(2, 102);
  model.params.p(0) += 0.25;
  io::write_model(path("bad.model"), model);
  try {
    io::read_model(path("bad.model"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sums to"), std::string::npos);
  }
}

TEST_F(ModelIo, ParseErrorsCarryLineNumbers) {
  const Model model = random_model(2, 103);
  io::write_model(path("ok.model"), model);
  std::string text = slurp(path("ok.model"));
  // Corrupt the mu0 line (line 4).
  const std::size_t pos = text.find('\n', text.find('\n', text.find('\n') + 1) + 1);
  std::string broken = text;
  broken.insert(pos + 1, "not_a_number\t");
  write_file(path("broken.model"), broken);
  try {
    io::read_model(path("broken.model"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":4"), std::string::npos);
  }
}

TEST_F(ModelIo, RejectsDuplicateConfigurationLines) {
  const Model model = random_model(1, 104);
  io::write_model(path("dup.model"), model);
  std::string text = slurp(path("dup.model"));
  const std::size_t zero_line = text.find("\n0\t");
  std::string broken = text.substr(0, zero_line + 1);
  // Repeat the "0" mass line twice in place of 0 and 1.
  const std::string zero_entry = text.substr(zero_line + 1, text.find('\n', zero_line + 1) - zero_line);
  broken += zero_entry + zero_entry;
  write_file(path("dupped.model"), broken);
  EXPECT_THROW(io::read_model(path("dupped.model")), DataError);
}

TEST_F(ModelIo, HashChangesWithContent) {
  const Model a = random_model(2, 105);
  Model b = a;
  b.params.sigma(0, 0) += 1e-9;
  EXPECT_NE(io::model_hash(a), io::model_hash(b));
  EXPECT_EQ(io::model_hash(a), io::model_hash(a));
}

TEST_F(ZMatrixIo, RoundTripWithoutIds) {
  const ZMatrix zm = random_zmatrix(3, 257, false, 201);
  io::write_zmatrix(path("a.mtz"), zm);
  const ZMatrix loaded = io::read_zmatrix(path("a.mtz"));
  EXPECT_EQ(loaded.z, zm.z);
  EXPECT_EQ(loaded.panel.names, zm.panel.names);
  EXPECT_EQ(loaded.panel.dof, zm.panel.dof);
  EXPECT_TRUE(loaded.ids.empty());
  // Byte-identical rewrite.
  io::write_zmatrix(path("b.mtz"), loaded);
  EXPECT_EQ(slurp(path("a.mtz")), slurp(path("b.mtz")));
}

TEST_F(ZMatrixIo, RoundTripWithIds) {
  const ZMatrix zm = random_zmatrix(2, 97, true, 202);
  io::write_zmatrix(path("a.mtz"), zm);
  const ZMatrix loaded = io::read_zmatrix(path("a.mtz"));
  ASSERT_EQ(loaded.ids.size(), zm.ids.size());
  for (std::size_t j = 0; j < zm.ids.size(); ++j) {
    EXPECT_EQ(loaded.ids[j].gene, zm.ids[j].gene);
    EXPECT_EQ(loaded.ids[j].snp, zm.ids[j].snp);
  }
  io::write_zmatrix(path("b.mtz"), loaded);
  EXPECT_EQ(slurp(path("a.mtz")), slurp(path("b.mtz")));
}

TEST_F(ZMatrixIo, WindowedReadsMatchSlices) {
  const ZMatrix zm = random_zmatrix(4, 1000, true, 203);
  io::write_zmatrix(path("w.mtz"), zm);
  io::ZMatrixReader reader(path("w.mtz"));
  EXPECT_EQ(reader.pair_count(), 1000);
  EXPECT_TRUE(reader.has_ids());
  const Eigen::MatrixXd window = reader.read_rows(137, 256);
  EXPECT_EQ(window, zm.z.middleCols(137, 256));
  const auto ids = reader.read_ids(990, 10);
  ASSERT_EQ(ids.size(), 10u);
  EXPECT_EQ(ids[0].snp, "snp990");
  EXPECT_THROW(reader.read_rows(900, 200), DataError);
}

TEST_F(ZMatrixIo, RejectsCorruptFiles) {
  write_file(path("bad.mtz"), "NOTZ");
  EXPECT_THROW(io::read_zmatrix(path("bad.mtz")), DataError);
  const ZMatrix zm = random_zmatrix(2, 50, false, 204);
  io::write_zmatrix(path("trunc.mtz"), zm);
  std::string bytes = slurp(path("trunc.mtz"));
  bytes.resize(bytes.size() - 37);
  write_file(path("trunc.mtz"), bytes);
  EXPECT_THROW(io::read_zmatrix(path("trunc.mtz")), DataError);
}

TEST_F(TsvIo, TruthRoundTrip) {
  std::vector<Configuration> configs = {Configuration{0}, Configuration{5},
                                        Configuration{15}, Configuration{2}};
  io::write_truth_tsv(path("truth.tsv"), configs, 4);
  const auto loaded = io::read_truth_tsv(path("truth.tsv"));
  ASSERT_EQ(loaded.size(), configs.size());
  for (std::size_t j = 0; j < configs.size(); ++j)
    EXPECT_EQ(loaded[j].mask, configs[j].mask);
}

TEST_F(TsvIo, ResultsWriterPlaceholdersAndReload) {
  ZMatrix zm = random_zmatrix(2, 4, true, 205);
  InferenceResult result;
  result.lfdr = {0.01, 0.8, 0.02, 0.99};
  result.rejected = {1, 0, 1, 0};
  result.rejected_count = 2;
  result.detail_col = {0, -1, 1, -1};
  result.map_config = {Configuration{1}, Configuration{3}};
  result.tissue_posteriors = Eigen::MatrixXd(2, 2);
  result.tissue_posteriors << 0.9, 0.8, 0.1, 0.7;
  io::write_results_tsv(path("res.tsv"), zm, result);

  const std::string text = slurp(path("res.tsv"));
  EXPECT_NE(text.find("pair_id\tgene\tsnp\tlfdr\trejected\tmap_config\tposterior_t1\tposterior_t2"),
            std::string::npos);
  EXPECT_NE(text.find("\t.\t.\t."), std::string::npos);  // unrejected row placeholders

  const io::ResultsSummary summary = io::read_results_tsv(path("res.tsv"));
  EXPECT_EQ(summary.tissue_count, 2);
  EXPECT_EQ(summary.rejected, (std::vector<char>{1, 0, 1, 0}));
  EXPECT_EQ(summary.map_config[0].mask, 1u);
  EXPECT_EQ(summary.map_config[2].mask, 3u);
}

TEST_F(TsvIo, StatsTableTAndRVariants) {
  write_file(path("t.tsv"),
             "gene\tsnp\tt_a\tt_b\n"
             "g1\ts1\t2.0\t0.0\n"
             "g2\ts2\t-1.5\t3.25\n");
  const io::StatsTable t_table = io::read_stats_tsv(path("t.tsv"));
  EXPECT_TRUE(t_table.is_t);
  EXPECT_EQ(t_table.tissues, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t_table.values.cols(), 2);
  EXPECT_DOUBLE_EQ(t_table.values(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(t_table.values(1, 1), 3.25);
  EXPECT_EQ(t_table.ids[1].gene, "g2");

  write_file(path("r.tsv"),
             "gene\tsnp\tr_a\n"
             "g1\ts1\t0.5\n");
  EXPECT_FALSE(io::read_stats_tsv(path("r.tsv")).is_t);

  write_file(path("mixed.tsv"), "gene\tsnp\tt_a\tr_b\ng\ts\t1\t1\n");
  EXPECT_THROW(io::read_stats_tsv(path("mixed.tsv")), DataError);
  write_file(path("badhdr.tsv"), "gene\tsnp\tvalue\ng\ts\t1\n");
  EXPECT_THROW(io::read_stats_tsv(path("badhdr.tsv")), DataError);
}

TEST_F(TsvIo, GenotypeParsingAndErrors) {
  write_file(path("geno.tsv"),
             "id\td1\td2\td3\n"
             "s1\t0\t1\tNA\n"
             "s2\t2\t2\t1\n");
  write_file(path("pos.tsv"),
             "snp\tchrom\tpos\n"
             "s1\t1\t100\n"
             "s2\t1\t250\n");
  const GenotypeMatrix geno = io::read_genotype_tsv(path("geno.tsv"), path("pos.tsv"));
  EXPECT_EQ(geno.snp_count(), 2);
  EXPECT_EQ(geno.donors, (std::vector<std::string>{"d1", "d2", "d3"}));
  EXPECT_TRUE(std::isnan(geno.values(0, 2)));
  EXPECT_EQ(geno.snps[1].pos, 250);

  write_file(path("badval.tsv"), "id\td1\ns1\t7\n");
  try {
    io::read_genotype_tsv(path("badval.tsv"), path("pos.tsv"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }

  write_file(path("geno2.tsv"), "id\td1\nsX\t1\n");
  EXPECT_THROW(io::read_genotype_tsv(path("geno2.tsv"), path("pos.tsv")), DataError);
}

TEST_F(TsvIo, ExpressionAndCovariates) {
  write_file(path("expr.tsv"),
             "id\td1\td2\n"
             "g1\t0.5\t1.5\n"
             "g2\t-1\t2\n");
  write_file(path("tss.tsv"),
             "gene\tchrom\ttss\n"
             "g1\t1\t1000\n"
             "g2\t2\t5000\n");
  const ExpressionMatrix expr = io::read_expression_tsv(path("expr.tsv"), path("tss.tsv"));
  EXPECT_EQ(expr.gene_count(), 2);
  EXPECT_EQ(expr.genes[1].chrom, "2");
  EXPECT_DOUBLE_EQ(expr.values(1, 1), 2.0);

  write_file(path("cov.tsv"),
             "id\tpc1\tpc2\n"
             "d1\t0.1\t-0.2\n"
             "d2\t0.3\t0.4\n");
  const io::CovariateTable cov = io::read_covariates_tsv(path("cov.tsv"));
  EXPECT_EQ(cov.covariates, (std::vector<std::string>{"pc1", "pc2"}));
  EXPECT_DOUBLE_EQ(cov.values(1, 1), 0.4);
}

TEST_F(TsvIo, TraceWriterShape) {
  FitTrace trace;
  trace.loglik = {-100.0, -90.5, -90.2};
  trace.psd_repairs = 1;
  io::write_trace_tsv(path("trace.tsv"), trace);
  const std::string text = slurp(path("trace.tsv"));
  EXPECT_NE(text.find("iteration\tloglik\tdelta_loglik\tpsd_repairs"), std::string::npos);
  EXPECT_NE(text.find("0\t-100\t."), std::string::npos);
  EXPECT_NE(text.find("9.5"), std::string::npos);
}

TEST_F(TsvIo, ConfusionWriterShape) {
  ScoreResult score;
  score.rejections = 5;
  score.realized_fdr = 0.2;
  ConfusionRow row;
  row.config = Configuration{1};
  row.true_count = 10;
  row.discoveries = 5;
  row.intersection = 4;
  row.fdr = 0.2;
  score.table = {row};
  io::write_confusion_tsv(path("conf.tsv"), score, 2);
  const std::string text = slurp(path("conf.tsv"));
  EXPECT_NE(text.find("config\ttrue\tdiscoveries\tintersection\tfdr"), std::string::npos);
  EXPECT_NE(text.find("10\t10\t5\t4\t0.2"), std::string::npos);
}
