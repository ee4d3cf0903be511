// Copyright 2026 The sq Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace sq {

/// Stream purposes split off one root seed. A stream seed is
/// splitmix64(root + kGolden * (purpose + 1)); per-item seeds inside a stream
/// apply the same step again with the item counter.
enum class SeedPurpose : std::uint64_t { ModelInit = 1, Calibration = 2, Evaluation = 3 };

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter) noexcept {
  return splitmix64(root + kGolden * (counter + 1));
}

constexpr std::uint64_t purpose_seed(std::uint64_t root, SeedPurpose p) noexcept {
  return derive_seed(root, static_cast<std::uint64_t>(p));
}

}  // namespace sq
