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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sq/matrix.hpp"

namespace sq {

/// Named-tensor file.
///
/// Layout (all integers little-endian):
///   bytes 0..7   magic "SQTN\0\x01\0\0"
///   bytes 8..15  u64 length L of the index
///   next L bytes UTF-8 JSON object: name -> {"dtype", "shape", "offset", "length"}
///   zero padding up to the next multiple of 64; the payload region starts there
///   payloads, each at `offset` bytes into the payload region (a multiple of 64)
inline constexpr std::array<std::uint8_t, 8> kContainerMagic = {'S', 'Q', 'T', 'N', 0, 1, 0, 0};
inline constexpr std::size_t kContainerAlign = 64;

enum class DType { F32, F64, U8, I32 };

const char* dtype_name(DType t) noexcept;
std::size_t dtype_size(DType t) noexcept;

struct TensorEntry {
  DType dtype = DType::F32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t elements() const;
  bool operator==(const TensorEntry&) const = default;
};

class TensorContainer {
 public:
  void put_f32(const std::string& name, const MatrixF& m);
  void put_f32(const std::string& name, std::span<const float> v,
               std::vector<std::size_t> shape = {});
  void put_f64(const std::string& name, std::span<const double> v,
               std::vector<std::size_t> shape = {});
  void put_f64(const std::string& name, const MatrixD& m);
  void put_u8(const std::string& name, std::span<const std::uint8_t> v, std::vector<std::size_t> shape);
  void put_i32(const std::string& name, std::span<const std::int32_t> v,
               std::vector<std::size_t> shape = {});

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const TensorEntry& entry(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }

  /// Throws MissingArtifact when absent, ShapeMismatch on dtype/rank mismatch.
  MatrixF get_f32_matrix(const std::string& name) const;
  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::uint8_t> get_u8(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static TensorContainer parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorContainer load(const std::filesystem::path& path);

  bool operator==(const TensorContainer&) const = default;

 private:
  void put(const std::string& name, DType dtype, std::vector<std::size_t> shape, const void* data,
           std::size_t bytes);

  std::map<std::string, TensorEntry> entries_;
};

}  // namespace sq
