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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mteqtl {

inline constexpr const char* kVersion = "0.1.0";

/// Identifier of the counter-based generator; recorded in dataset metadata
/// so simulated data stays reproducible across releases.
inline constexpr const char* kRngVersion = "philox4x64-10/v1";

/// Process exit codes used by the CLI. Stable contract.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

/// Malformed or inconsistent input: bad file contents, invalid models,
/// mismatched dimensions, unknown tissue names.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure of a numerical procedure: singular component covariance,
/// degenerate EM weights, non-finite likelihood.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// FNV-1a 64-bit hash; platform independent, used for content fingerprints.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mteqtl
