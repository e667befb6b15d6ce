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

#include <array>
#include <cmath>
#include <cstdint>

namespace mteqtl {

/// Philox 4x64 counter-based generator, 10 rounds. Stateless block function:
/// the same (key, counter) pair always yields the same 256-bit block, which
/// makes streams independent of chunking and thread count.
struct Philox4x64 {
  using Counter = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  static constexpr std::uint64_t kMult0 = 0xD2E7470EE14C6C93ULL;
  static constexpr std::uint64_t kMult1 = 0xCA5A826395121157ULL;
  static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

  static Counter block(Key key, Counter ctr) {
    for (int round = 0; round < 10; ++round) {
      const unsigned __int128 prod0 =
          static_cast<unsigned __int128>(ctr[0]) * kMult0;
      const unsigned __int128 prod1 =
          static_cast<unsigned __int128>(ctr[2]) * kMult1;
      const std::uint64_t lo0 = static_cast<std::uint64_t>(prod0);
      const std::uint64_t hi0 = static_cast<std::uint64_t>(prod0 >> 64);
      const std::uint64_t lo1 = static_cast<std::uint64_t>(prod1);
      const std::uint64_t hi1 = static_cast<std::uint64_t>(prod1 >> 64);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

/// Sequential draw interface over one Philox stream. A stream is addressed by
/// (seed, stream id); the simulator keys one stream per sampled row.
class PhiloxStream {
 public:
  PhiloxStream(std::uint64_t seed, std::uint64_t stream)
      : key_{seed, stream} {}

  std::uint64_t next_u64() {
    if (pos_ == 4) {
      block_ = Philox4x64::block(key_, {ctr_++, 0, 0, 0});
      pos_ = 0;
    }
    return block_[pos_++];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; draws are produced in pairs.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 on (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  Philox4x64::Key key_;
  Philox4x64::Counter block_{};
  std::uint64_t ctr_ = 0;
  int pos_ = 4;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mteqtl
