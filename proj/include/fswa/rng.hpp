/*
 * Copyright 2026 The fastswa Authors
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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <utility>

namespace fswa {

/// Independent random streams. Every consumer of randomness derives its
/// generator from (seed, stream, index) so that changing one consumer never
/// shifts the numbers seen by another.
enum class Stream : std::uint64_t {
  Init = 1,
  Data = 2,
  Split = 3,
  Batch = 4,
  StudentNoise = 5,
  StudentDropout = 6,
  TeacherNoise = 7,
  TeacherDropout = 8,
  Probe = 9,
  Ray = 10,
  Simulation = 11,
  Test = 12,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the n-th output is a pure function of
/// (key, n), where the key hashes (seed, stream, index). Copies are cheap
/// and independent.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream)) ^
                        (index * 0xD1B54A32D192ED03ULL))) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  /// Standard normal via Box-Muller (one variate per call; the sine branch
  /// is discarded so the output stays a function of the counter alone).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Seed for the `index`-th task of a stream, e.g. the perturbation of one
/// optimizer step.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(stream) << 56)) + index);
}

/// Fisher-Yates shuffle driven by a CounterRng.
template <typename Container>
void shuffle(Container& items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace fswa
