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
#include <cstdint>
#include <string>
#include <vector>

#include "mteqtl/common.hpp"
#include "mteqtl/model.hpp"

namespace mteqtl {

struct PairId {
  std::string gene;
  std::string snp;
};

/// N gene-SNP pairs by K tissues of z statistics. Stored with one pair per
/// column (K x N) so per-pair vectors are contiguous; immutable after
/// construction by convention.
struct ZMatrix {
  TissuePanel panel;
  Eigen::MatrixXd z;         // K x N
  std::vector<PairId> ids;   // empty, or one entry per column

  std::int64_t pair_count() const { return z.cols(); }
  int tissue_count() const { return static_cast<int>(z.rows()); }

  std::vector<std::string> validate() const {
    std::vector<std::string> bad = panel.validate();
    if (panel.tissue_count() != tissue_count())
      bad.push_back("panel has " + std::to_string(panel.tissue_count()) +
                    " tissues but matrix has " + std::to_string(tissue_count()) +
                    " rows per pair");
    if (!z.allFinite()) bad.push_back("z matrix has non-finite entries");
    if (!ids.empty() && static_cast<std::int64_t>(ids.size()) != pair_count())
      bad.push_back("pair id count does not match pair count");
    return bad;
  }
};

inline void require_valid(const ZMatrix& zm) {
  const auto bad = zm.validate();
  if (bad.empty()) return;
  std::string msg = "invalid z matrix:";
  for (const auto& b : bad) msg += "\n  " + b;
  throw DataError(msg);
}

}  // namespace mteqtl
