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

#include "mteqtl/philox.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using mteqtl::Philox4x64;
using mteqtl::PhiloxStream;

TEST(Philox, BlockIsDeterministic) {
  const auto a = Philox4x64::block({1, 2}, {3, 4, 5, 6});
  const auto b = Philox4x64::block({1, 2}, {3, 4, 5, 6});
  EXPECT_EQ(a, b);
}

TEST(Philox, BlockDependsOnEveryInputWord) {
  const auto base = Philox4x64::block({1, 2}, {3, 4, 5, 6});
  EXPECT_NE(base, Philox4x64::block({9, 2}, {3, 4, 5, 6}));
  EXPECT_NE(base, Philox4x64::block({1, 9}, {3, 4, 5, 6}));
  EXPECT_NE(base, Philox4x64::block({1, 2}, {9, 4, 5, 6}));
  EXPECT_NE(base, Philox4x64::block({1, 2}, {3, 9, 5, 6}));
  EXPECT_NE(base, Philox4x64::block({1, 2}, {3, 4, 9, 6}));
  EXPECT_NE(base, Philox4x64::block({1, 2}, {3, 4, 5, 9}));
}

TEST(Philox, StreamsAreIndependentOfEachOther) {
  PhiloxStream a(7, 0), b(7, 1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 64; ++i) {
    seen.insert(a.next_u64());
    seen.insert(b.next_u64());
  }
  EXPECT_EQ(seen.size(), 128u);  // no collisions among 128 draws
}

TEST(Philox, UniformMomentsAndRange) {
  PhiloxStream stream(42, 0);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = stream.next_uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sumsq += u * u;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.005);
}

TEST(Philox, NormalMoments) {
  PhiloxStream stream(43, 17);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0, sumcube = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = stream.next_normal();
    sum += x;
    sumsq += x * x;
    sumcube += x * x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sumsq / n, 1.0, 0.03);
  EXPECT_NEAR(sumcube / n, 0.0, 0.08);
}

TEST(Philox, CounterAdvancesThroughBlocks) {
  PhiloxStream stream(1, 1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(stream.next_u64());
  EXPECT_EQ(seen.size(), 1000u);
}
