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

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mteqtl/common.hpp"
#include "mteqtl/em.hpp"
#include "mteqtl/inference.hpp"
#include "mteqtl/model.hpp"
#include "mteqtl/simulate.hpp"
#include "mteqtl/zmatrix.hpp"
#include "mteqtl/zstats.hpp"

static_assert(std::endian::native == std::endian::little,
              "the binary z-matrix codec assumes a little-endian host");

namespace mteqtl::io {

// ---------------------------------------------------------------------------
// Small parsing helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline double parse_double(const std::string& token, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size() || token.empty() || errno == ERANGE)
    throw DataError(where + ": cannot parse number '" + token + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& token, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(token.c_str(), &end, 10);
  if (end != token.c_str() + token.size() || token.empty() || errno == ERANGE)
    throw DataError(where + ": cannot parse integer '" + token + "'");
  return v;
}

/// Full-precision decimal rendering; parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class LineReader {
 public:
  explicit LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw DataError(path + ": cannot open for reading");
  }

  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no_;
    return true;
  }

  std::string where() const { return path_ + ":" + std::to_string(line_no_); }

  std::string require(const std::string& what) {
    std::string line;
    if (!next(line)) throw DataError(path_ + ": unexpected end of file, expected " + what);
    return line;
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::int64_t line_no_ = 0;
};

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model file: a plain text format that round-trips bit-exactly.
//   line 1            K
//   line 2            tissue names, tab separated
//   line 3            degrees of freedom
//   line 4            mu0
//   next K lines      Delta rows
//   next K lines      Sigma rows
//   next 2^K lines    <configuration as binary string, tissue 1 leftmost> <probability>
// ---------------------------------------------------------------------------

inline std::string model_to_string(const Model& model) {
  const int k = model.panel.tissue_count();
  std::ostringstream out;
  out << k << "\n";
  for (int i = 0; i < k; ++i) out << (i ? "\t" : "") << model.panel.names[i];
  out << "\n";
  for (int i = 0; i < k; ++i) out << (i ? "\t" : "") << model.panel.dof[i];
  out << "\n";
  for (int i = 0; i < k; ++i)
    out << (i ? "\t" : "") << detail::format_double(model.params.mu0(i));
  out << "\n";
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c)
      out << (c ? "\t" : "") << detail::format_double(model.params.delta(r, c));
    out << "\n";
  }
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c)
      out << (c ? "\t" : "") << detail::format_double(model.params.sigma(r, c));
    out << "\n";
  }
  for (std::uint32_t g = 0; g < model.params.config_count(); ++g)
    out << Configuration{g}.to_string(k) << "\t"
        << detail::format_double(model.params.p(g)) << "\n";
  return out.str();
}

inline Model model_from_lines(detail::LineReader& reader) {
  Model model;
  const std::string k_line = reader.require("tissue count");
  const std::int64_t k = detail::parse_int(k_line, reader.where());
  if (k < 1 || k > kMaxTissues)
    throw DataError(reader.where() + ": tissue count " + std::to_string(k) +
                    " outside [1, 16]");
  auto expect_fields = [&](const std::string& line, std::int64_t count,
                           const char* what) {
    auto fields = detail::split_tabs(line);
    if (static_cast<std::int64_t>(fields.size()) != count)
      throw DataError(reader.where() + ": expected " + std::to_string(count) + " " +
                      what + ", found " + std::to_string(fields.size()));
    return fields;
  };

  model.panel.names = expect_fields(reader.require("tissue names"), k, "tissue names");
  for (const auto& tok : expect_fields(reader.require("degrees of freedom"), k, "dof"))
    model.panel.dof.push_back(static_cast<int>(detail::parse_int(tok, reader.where())));

  ModelParams& theta = model.params;
  theta.mu0 = Eigen::VectorXd(k);
  {
    auto fields = expect_fields(reader.require("mu0"), k, "mu0 entries");
    for (std::int64_t i = 0; i < k; ++i)
      theta.mu0(i) = detail::parse_double(fields[i], reader.where());
  }
  theta.delta = Eigen::MatrixXd(k, k);
  for (std::int64_t r = 0; r < k; ++r) {
    auto fields = expect_fields(reader.require("Delta row"), k, "Delta entries");
    for (std::int64_t c = 0; c < k; ++c)
      theta.delta(r, c) = detail::parse_double(fields[c], reader.where());
  }
  theta.sigma = Eigen::MatrixXd(k, k);
  for (std::int64_t r = 0; r < k; ++r) {
    auto fields = expect_fields(reader.require("Sigma row"), k, "Sigma entries");
    for (std::int64_t c = 0; c < k; ++c)
      theta.sigma(r, c) = detail::parse_double(fields[c], reader.where());
  }
  const std::int64_t configs = std::int64_t{1} << k;
  theta.p = Eigen::VectorXd::Constant(configs, -1.0);
  for (std::int64_t g = 0; g < configs; ++g) {
    auto fields = expect_fields(reader.require("configuration mass"), 2,
                                "fields (configuration, probability)");
    const Configuration config = Configuration::from_string(fields[0]);
    if (static_cast<std::int64_t>(fields[0].size()) != k)
      throw DataError(reader.where() + ": configuration string length != K");
    if (theta.p(config.mask) >= 0.0)
      throw DataError(reader.where() + ": duplicate configuration " + fields[0]);
    theta.p(config.mask) = detail::parse_double(fields[1], reader.where());
  }
  return model;
}

/// Reads and validates a model file; violations surface as data errors.
inline Model read_model(const std::string& path) {
  detail::LineReader reader(path);
  Model model = model_from_lines(reader);
  std::string extra;
  if (reader.next(extra) && !extra.empty())
    throw DataError(reader.where() + ": trailing content after model");
  auto bad = model.panel.validate();
  const auto param_bad = validate_model(model.params);
  bad.insert(bad.end(), param_bad.begin(), param_bad.end());
  if (model.panel.tissue_count() != model.params.tissue_count())
    bad.push_back("panel and parameter tissue counts differ");
  if (!bad.empty()) {
    std::string msg = path + ": invalid model:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  return model;
}

inline void write_model(const std::string& path, const Model& model) {
  auto out = detail::open_out(path);
  out << model_to_string(model);
  if (!out) throw DataError(path + ": write failed");
}

inline std::string model_hash(const Model& model) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(model_to_string(model))));
  return buf;
}

// ---------------------------------------------------------------------------
// Binary z-matrix container (magic "MTZ1"), little endian:
//   magic[4]  u32 K  u64 N
//   per tissue: u16 name bytes, name (UTF-8)
//   K x f64 degrees of freedom
//   N rows of K f64
//   optional pair-id block: u64 offsets[N + 1], then the id blob, where each
//   id is "gene\tsnp" in UTF-8 and offsets index into the blob.
// ---------------------------------------------------------------------------

inline constexpr char kZMagic[4] = {'M', 'T', 'Z', '1'};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw DataError(path + ": truncated file");
  return value;
}

}  // namespace detail

inline void write_zmatrix(const std::string& path, const ZMatrix& zm) {
  require_valid(zm);
  auto out = detail::open_out(path);
  out.write(kZMagic, 4);
  detail::write_pod(out, static_cast<std::uint32_t>(zm.tissue_count()));
  detail::write_pod(out, static_cast<std::uint64_t>(zm.pair_count()));
  for (int k = 0; k < zm.tissue_count(); ++k) {
    const std::string& name = zm.panel.names[static_cast<std::size_t>(k)];
    if (name.size() > 0xffff) throw DataError("tissue name too long");
    detail::write_pod(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (int k = 0; k < zm.tissue_count(); ++k)
    detail::write_pod(out, static_cast<double>(zm.panel.dof[static_cast<std::size_t>(k)]));
  // Rows are pairs; storage is column-major K x N, so stream one column at
  // a time.
  for (std::int64_t j = 0; j < zm.pair_count(); ++j)
    out.write(reinterpret_cast<const char*>(zm.z.col(j).data()),
              static_cast<std::streamsize>(sizeof(double) * zm.z.rows()));
  if (!zm.ids.empty()) {
    std::string blob;
    std::vector<std::uint64_t> offsets;
    offsets.reserve(zm.ids.size() + 1);
    for (const PairId& id : zm.ids) {
      offsets.push_back(blob.size());
      blob += id.gene;
      blob += '\t';
      blob += id.snp;
    }
    offsets.push_back(blob.size());
    out.write(reinterpret_cast<const char*>(offsets.data()),
              static_cast<std::streamsize>(sizeof(std::uint64_t) * offsets.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  if (!out) throw DataError(path + ": write failed");
}

/// Streaming reader over the binary container. Header fields are parsed
/// eagerly; rows (and ids) are fetched in windows on demand.
class ZMatrixReader {
 public:
  explicit ZMatrixReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError(path + ": cannot open for reading");
    char magic[4];
    in_.read(magic, 4);
    if (!in_ || std::memcmp(magic, kZMagic, 4) != 0)
      throw DataError(path + ": not a z-matrix file (bad magic)");
    const auto k = detail::read_pod<std::uint32_t>(in_, path_);
    if (k < 1 || k > kMaxTissues)
      throw DataError(path + ": tissue count " + std::to_string(k) + " outside [1, 16]");
    n_ = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(in_, path_));
    for (std::uint32_t i = 0; i < k; ++i) {
      const auto len = detail::read_pod<std::uint16_t>(in_, path_);
      std::string name(len, '\0');
      in_.read(name.data(), len);
      if (!in_) throw DataError(path + ": truncated tissue name");
      panel_.names.push_back(std::move(name));
    }
    for (std::uint32_t i = 0; i < k; ++i) {
      const double dof = detail::read_pod<double>(in_, path_);
      if (dof != static_cast<double>(static_cast<int>(dof)))
        throw DataError(path + ": non-integer degrees of freedom");
      panel_.dof.push_back(static_cast<int>(dof));
    }
    rows_start_ = in_.tellg();
    in_.seekg(0, std::ios::end);
    const std::int64_t file_size = in_.tellg();
    const std::int64_t rows_bytes = n_ * k * static_cast<std::int64_t>(sizeof(double));
    const std::int64_t trailing = file_size - rows_start_ - rows_bytes;
    if (trailing < 0) throw DataError(path + ": file shorter than header promises");
    if (trailing > 0) {
      const std::int64_t offsets_bytes = (n_ + 1) * static_cast<std::int64_t>(sizeof(std::uint64_t));
      if (trailing < offsets_bytes)
        throw DataError(path + ": malformed pair-id block");
      has_ids_ = true;
      ids_start_ = rows_start_ + rows_bytes;
      blob_start_ = ids_start_ + offsets_bytes;
      blob_size_ = trailing - offsets_bytes;
    }
  }

  const TissuePanel& panel() const { return panel_; }
  std::int64_t pair_count() const { return n_; }
  int tissue_count() const { return panel_.tissue_count(); }
  bool has_ids() const { return has_ids_; }

  /// Reads rows [start, start + count) as a K x count block.
  Eigen::MatrixXd read_rows(std::int64_t start, std::int64_t count) {
    check_window(start, count);
    const int k = tissue_count();
    Eigen::MatrixXd block(k, count);
    in_.clear();
    in_.seekg(rows_start_ + start * k * static_cast<std::int64_t>(sizeof(double)));
    in_.read(reinterpret_cast<char*>(block.data()),
             static_cast<std::streamsize>(sizeof(double) * k * count));
    if (!in_) throw DataError(path_ + ": truncated rows");
    return block;
  }

  std::vector<PairId> read_ids(std::int64_t start, std::int64_t count) {
    check_window(start, count);
    if (!has_ids_) return {};
    std::vector<std::uint64_t> offsets(static_cast<std::size_t>(count) + 1);
    in_.clear();
    in_.seekg(ids_start_ + start * static_cast<std::int64_t>(sizeof(std::uint64_t)));
    in_.read(reinterpret_cast<char*>(offsets.data()),
             static_cast<std::streamsize>(sizeof(std::uint64_t) * offsets.size()));
    if (!in_) throw DataError(path_ + ": truncated id offsets");
    std::vector<PairId> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      const std::uint64_t lo = offsets[static_cast<std::size_t>(i)];
      const std::uint64_t hi = offsets[static_cast<std::size_t>(i) + 1];
      if (hi < lo || hi > static_cast<std::uint64_t>(blob_size_))
        throw DataError(path_ + ": malformed id offsets");
      std::string entry(hi - lo, '\0');
      in_.seekg(blob_start_ + static_cast<std::int64_t>(lo));
      in_.read(entry.data(), static_cast<std::streamsize>(entry.size()));
      if (!in_) throw DataError(path_ + ": truncated id blob");
      const std::size_t tab = entry.find('\t');
      if (tab == std::string::npos)
        throw DataError(path_ + ": malformed pair id '" + entry + "'");
      out.push_back({entry.substr(0, tab), entry.substr(tab + 1)});
    }
    return out;
  }

  ZMatrix read_all() {
    ZMatrix zm;
    zm.panel = panel_;
    zm.z = read_rows(0, n_);
    if (has_ids_) zm.ids = read_ids(0, n_);
    return zm;
  }

 private:
  void check_window(std::int64_t start, std::int64_t count) const {
    if (start < 0 || count < 0 || start + count > n_)
      throw DataError(path_ + ": row window [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") outside 0.." +
                      std::to_string(n_));
  }

  std::string path_;
  std::ifstream in_;
  TissuePanel panel_;
  std::int64_t n_ = 0;
  std::int64_t rows_start_ = 0;
  bool has_ids_ = false;
  std::int64_t ids_start_ = 0;
  std::int64_t blob_start_ = 0;
  std::int64_t blob_size_ = 0;
};

inline ZMatrix read_zmatrix(const std::string& path) {
  return ZMatrixReader(path).read_all();
}

// ---------------------------------------------------------------------------
// TSV codecs
// ---------------------------------------------------------------------------

/// Genotype values: rows are SNPs, header is "id" then donor ids, NA marks
/// missing entries. Positions: three columns snp/chrom/pos with header.
inline GenotypeMatrix read_genotype_tsv(const std::string& values_path,
                                        const std::string& positions_path) {
  GenotypeMatrix geno;
  std::vector<std::string> snp_ids;
  std::vector<std::vector<double>> rows;
  {
    detail::LineReader reader(values_path);
    const auto header = detail::split_tabs(reader.require("header"));
    if (header.size() < 2)
      throw DataError(reader.where() + ": header needs an id column and donors");
    geno.donors.assign(header.begin() + 1, header.end());
    std::string line;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() != header.size())
        throw DataError(reader.where() + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(fields.size()));
      snp_ids.push_back(fields[0]);
      std::vector<double> row(fields.size() - 1);
      for (std::size_t j = 1; j < fields.size(); ++j) {
        if (fields[j] == "NA") {
          row[j - 1] = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        const double v = detail::parse_double(fields[j], reader.where());
        if (v != 0.0 && v != 1.0 && v != 2.0)
          throw DataError(reader.where() + ": genotype value must be 0, 1, 2 or NA");
        row[j - 1] = v;
      }
      rows.push_back(std::move(row));
    }
  }
  geno.values = Eigen::MatrixXd(static_cast<std::int64_t>(rows.size()),
                                static_cast<std::int64_t>(geno.donors.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      geno.values(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];

  // Join positions by SNP id.
  std::vector<SnpInfo> pos_entries;
  {
    detail::LineReader reader(positions_path);
    reader.require("header");
    std::string line;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() != 3)
        throw DataError(reader.where() + ": expected 3 fields (snp, chrom, pos)");
      pos_entries.push_back(
          {fields[0], fields[1], detail::parse_int(fields[2], reader.where())});
    }
  }
  geno.snps.reserve(snp_ids.size());
  for (const std::string& id : snp_ids) {
    const SnpInfo* found = nullptr;
    for (const auto& e : pos_entries)
      if (e.id == id) {
        found = &e;
        break;
      }
    if (!found) throw DataError(positions_path + ": no position for SNP " + id);
    geno.snps.push_back(*found);
  }
  return geno;
}

/// Expression values: rows are genes, header is "id" then donor ids.
/// TSS file: three columns gene/chrom/tss with header.
inline ExpressionMatrix read_expression_tsv(const std::string& values_path,
                                            const std::string& tss_path) {
  ExpressionMatrix expr;
  std::vector<std::string> gene_ids;
  std::vector<std::vector<double>> rows;
  {
    detail::LineReader reader(values_path);
    const auto header = detail::split_tabs(reader.require("header"));
    if (header.size() < 2)
      throw DataError(reader.where() + ": header needs an id column and donors");
    expr.donors.assign(header.begin() + 1, header.end());
    std::string line;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() != header.size())
        throw DataError(reader.where() + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(fields.size()));
      gene_ids.push_back(fields[0]);
      std::vector<double> row(fields.size() - 1);
      for (std::size_t j = 1; j < fields.size(); ++j)
        row[j - 1] = detail::parse_double(fields[j], reader.where());
      rows.push_back(std::move(row));
    }
  }
  expr.values = Eigen::MatrixXd(static_cast<std::int64_t>(rows.size()),
                                static_cast<std::int64_t>(expr.donors.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      expr.values(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];

  std::vector<GeneInfo> tss_entries;
  {
    detail::LineReader reader(tss_path);
    reader.require("header");
    std::string line;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() != 3)
        throw DataError(reader.where() + ": expected 3 fields (gene, chrom, tss)");
      tss_entries.push_back(
          {fields[0], fields[1], detail::parse_int(fields[2], reader.where())});
    }
  }
  expr.genes.reserve(gene_ids.size());
  for (const std::string& id : gene_ids) {
    const GeneInfo* found = nullptr;
    for (const auto& e : tss_entries)
      if (e.id == id) {
        found = &e;
        break;
      }
    if (!found) throw DataError(tss_path + ": no TSS for gene " + id);
    expr.genes.push_back(*found);
  }
  return expr;
}

struct CovariateTable {
  std::vector<std::string> donors;
  std::vector<std::string> covariates;
  Eigen::MatrixXd values;  // donors x covariates
};

/// Covariates: rows are donors, header is "id" then covariate names.
inline CovariateTable read_covariates_tsv(const std::string& path) {
  CovariateTable table;
  detail::LineReader reader(path);
  const auto header = detail::split_tabs(reader.require("header"));
  if (header.empty()) throw DataError(path + ": empty header");
  table.covariates.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != header.size())
      throw DataError(reader.where() + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    table.donors.push_back(fields[0]);
    std::vector<double> row(fields.size() - 1);
    for (std::size_t j = 1; j < fields.size(); ++j)
      row[j - 1] = detail::parse_double(fields[j], reader.where());
    rows.push_back(std::move(row));
  }
  table.values = Eigen::MatrixXd(static_cast<std::int64_t>(rows.size()),
                                 static_cast<std::int64_t>(table.covariates.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
  return table;
}

/// Precomputed statistics: header gene, snp, then t_<tissue> or r_<tissue>
/// columns (one kind, not mixed).
struct StatsTable {
  std::vector<std::string> tissues;
  bool is_t = false;  // true: t statistics, false: correlations
  std::vector<PairId> ids;
  Eigen::MatrixXd values;  // K x N, one pair per column
};

inline StatsTable read_stats_tsv(const std::string& path) {
  StatsTable table;
  detail::LineReader reader(path);
  const auto header = detail::split_tabs(reader.require("header"));
  if (header.size() < 3 || header[0] != "gene" || header[1] != "snp")
    throw DataError(path + ": header must start with 'gene\tsnp'");
  bool saw_t = false, saw_r = false;
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (header[c].rfind("t_", 0) == 0) {
      saw_t = true;
      table.tissues.push_back(header[c].substr(2));
    } else if (header[c].rfind("r_", 0) == 0) {
      saw_r = true;
      table.tissues.push_back(header[c].substr(2));
    } else {
      throw DataError(path + ": statistic column '" + header[c] +
                      "' must be named t_<tissue> or r_<tissue>");
    }
  }
  if (saw_t == saw_r)
    throw DataError(path + ": columns must be all t_* or all r_*");
  table.is_t = saw_t;
  std::vector<std::vector<double>> rows;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != header.size())
      throw DataError(reader.where() + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    table.ids.push_back({fields[0], fields[1]});
    std::vector<double> row(fields.size() - 2);
    for (std::size_t j = 2; j < fields.size(); ++j)
      row[j - 2] = detail::parse_double(fields[j], reader.where());
    rows.push_back(std::move(row));
  }
  table.values = Eigen::MatrixXd(static_cast<std::int64_t>(table.tissues.size()),
                                 static_cast<std::int64_t>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<std::int64_t>(j), static_cast<std::int64_t>(i)) = rows[i][j];
  return table;
}

// ---------------------------------------------------------------------------
// Result and diagnostic writers
// ---------------------------------------------------------------------------

inline void write_results_tsv(const std::string& path, const ZMatrix& zm,
                              const InferenceResult& result) {
  auto out = detail::open_out(path);
  const int k = zm.tissue_count();
  out << "pair_id\tgene\tsnp\tlfdr\trejected\tmap_config";
  for (int t = 0; t < k; ++t) out << "\tposterior_" << zm.panel.names[static_cast<std::size_t>(t)];
  out << "\n";
  for (std::int64_t j = 0; j < result.pair_count(); ++j) {
    const bool has_id = !zm.ids.empty();
    out << j << '\t'
        << (has_id ? zm.ids[static_cast<std::size_t>(j)].gene : ".") << '\t'
        << (has_id ? zm.ids[static_cast<std::size_t>(j)].snp : ".") << '\t'
        << detail::format_double(result.lfdr[static_cast<std::size_t>(j)]) << '\t'
        << (result.rejected[static_cast<std::size_t>(j)] ? 1 : 0) << '\t';
    const std::int64_t col = result.detail_col[static_cast<std::size_t>(j)];
    if (col < 0) {
      out << '.';
      for (int t = 0; t < k; ++t) out << "\t.";
    } else {
      out << result.map_config[static_cast<std::size_t>(col)].to_string(k);
      for (int t = 0; t < k; ++t)
        out << '\t' << detail::format_double(result.tissue_posteriors(t, col));
    }
    out << "\n";
  }
  if (!out) throw DataError(path + ": write failed");
}

/// Minimal reload of a results file for scoring: rejection flags and MAP
/// configurations.
struct ResultsSummary {
  std::vector<char> rejected;
  std::vector<Configuration> map_config;  // only meaningful where rejected
  int tissue_count = 0;
};

inline ResultsSummary read_results_tsv(const std::string& path) {
  ResultsSummary summary;
  detail::LineReader reader(path);
  const auto header = detail::split_tabs(reader.require("header"));
  std::int64_t lfdr_col = -1, rejected_col = -1, map_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "lfdr") lfdr_col = static_cast<std::int64_t>(c);
    if (header[c] == "rejected") rejected_col = static_cast<std::int64_t>(c);
    if (header[c] == "map_config") map_col = static_cast<std::int64_t>(c);
  }
  if (lfdr_col < 0 || rejected_col < 0 || map_col < 0)
    throw DataError(path + ": missing lfdr/rejected/map_config columns");
  summary.tissue_count = 0;
  for (const auto& name : header)
    if (name.rfind("posterior_", 0) == 0) ++summary.tissue_count;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (static_cast<std::int64_t>(fields.size()) <= map_col)
      throw DataError(reader.where() + ": short row");
    const std::int64_t rejected =
        detail::parse_int(fields[static_cast<std::size_t>(rejected_col)], reader.where());
    summary.rejected.push_back(rejected != 0);
    if (rejected != 0) {
      summary.map_config.push_back(
          Configuration::from_string(fields[static_cast<std::size_t>(map_col)]));
    } else {
      summary.map_config.push_back(Configuration{0});
    }
  }
  return summary;
}

inline void write_truth_tsv(const std::string& path,
                            const std::vector<Configuration>& configs, int tissue_count) {
  auto out = detail::open_out(path);
  out << "pair_id\tconfig\n";
  for (std::size_t j = 0; j < configs.size(); ++j)
    out << j << '\t' << configs[j].to_string(tissue_count) << "\n";
  if (!out) throw DataError(path + ": write failed");
}

inline std::vector<Configuration> read_truth_tsv(const std::string& path) {
  detail::LineReader reader(path);
  reader.require("header");
  std::vector<Configuration> out;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 2)
      throw DataError(reader.where() + ": expected 2 fields (pair_id, config)");
    out.push_back(Configuration::from_string(fields[1]));
  }
  return out;
}

inline void write_trace_tsv(const std::string& path, const FitTrace& trace) {
  auto out = detail::open_out(path);
  out << "iteration\tloglik\tdelta_loglik\tpsd_repairs\n";
  for (std::size_t t = 0; t < trace.loglik.size(); ++t) {
    out << t << '\t' << detail::format_double(trace.loglik[t]) << '\t';
    if (t == 0)
      out << ".";
    else
      out << detail::format_double(trace.loglik[t] - trace.loglik[t - 1]);
    out << '\t' << trace.psd_repairs << "\n";
  }
  if (!out) throw DataError(path + ": write failed");
}

inline void write_confusion_tsv(const std::string& path, const ScoreResult& score,
                                int tissue_count) {
  auto out = detail::open_out(path);
  out << "config\ttrue\tdiscoveries\tintersection\tfdr\n";
  for (const auto& row : score.table)
    out << row.config.to_string(tissue_count) << '\t' << row.true_count << '\t'
        << row.discoveries << '\t' << row.intersection << '\t'
        << detail::format_double(row.fdr) << "\n";
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace mteqtl::io
