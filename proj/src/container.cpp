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

#include "sq/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace sq {

static_assert(std::endian::native == std::endian::little,
              "container payloads are written in host byte order");

namespace {

DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  if (s == "u8") return DType::U8;
  if (s == "i32") return DType::I32;
  throw Error(Errc::IOFailure, "unknown dtype '" + s + "' in container index");
}

std::size_t align_up(std::size_t n) {
  return (n + kContainerAlign - 1) / kContainerAlign * kContainerAlign;
}

template <typename T>
std::vector<T> decode(const TensorEntry& e) {
  std::vector<T> out(e.bytes.size() / sizeof(T));
  std::memcpy(out.data(), e.bytes.data(), out.size() * sizeof(T));
  return out;
}

}  // namespace

const char* dtype_name(DType t) noexcept {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U8: return "u8";
    case DType::I32: return "i32";
  }
  return "?";
}

std::size_t dtype_size(DType t) noexcept {
  switch (t) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::I32: return 4;
  }
  return 0;
}

std::size_t TensorEntry::elements() const {
  std::size_t n = 1;
  for (const auto s : shape) n *= s;
  return n;
}

void TensorContainer::put(const std::string& name, DType dtype, std::vector<std::size_t> shape,
                          const void* data, std::size_t bytes) {
  if (name.empty()) throw Error(Errc::InvalidParams, "tensor name is empty");
  TensorEntry e{dtype, std::move(shape), std::vector<std::uint8_t>(bytes)};
  if (e.elements() * dtype_size(dtype) != bytes) {
    throw Error(Errc::ShapeMismatch, "tensor '" + name + "' shape does not match payload");
  }
  if (bytes) std::memcpy(e.bytes.data(), data, bytes);
  entries_[name] = std::move(e);
}

void TensorContainer::put_f32(const std::string& name, const MatrixF& m) {
  put(name, DType::F32, {m.rows(), m.cols()}, m.data().data(), m.size() * 4);
}
void TensorContainer::put_f32(const std::string& name, std::span<const float> v,
                              std::vector<std::size_t> shape) {
  if (shape.empty()) shape = {v.size()};
  put(name, DType::F32, std::move(shape), v.data(), v.size() * 4);
}
void TensorContainer::put_f64(const std::string& name, std::span<const double> v,
                              std::vector<std::size_t> shape) {
  if (shape.empty()) shape = {v.size()};
  put(name, DType::F64, std::move(shape), v.data(), v.size() * 8);
}
void TensorContainer::put_f64(const std::string& name, const MatrixD& m) {
  put(name, DType::F64, {m.rows(), m.cols()}, m.data().data(), m.size() * 8);
}
void TensorContainer::put_u8(const std::string& name, std::span<const std::uint8_t> v,
                             std::vector<std::size_t> shape) {
  put(name, DType::U8, std::move(shape), v.data(), v.size());
}
void TensorContainer::put_i32(const std::string& name, std::span<const std::int32_t> v,
                              std::vector<std::size_t> shape) {
  if (shape.empty()) shape = {v.size()};
  put(name, DType::I32, std::move(shape), v.data(), v.size() * 4);
}

const TensorEntry& TensorContainer::entry(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(Errc::MissingArtifact, "tensor '" + name + "' not found");
  return it->second;
}

std::vector<std::string> TensorContainer::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

MatrixF TensorContainer::get_f32_matrix(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F32 || e.shape.size() != 2) {
    throw Error(Errc::ShapeMismatch, "tensor '" + name + "' is not a 2-D f32 tensor");
  }
  return MatrixF(e.shape[0], e.shape[1], decode<float>(e));
}

std::vector<float> TensorContainer::get_f32(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F32) throw Error(Errc::ShapeMismatch, "tensor '" + name + "' is not f32");
  return decode<float>(e);
}

std::vector<double> TensorContainer::get_f64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::F64) throw Error(Errc::ShapeMismatch, "tensor '" + name + "' is not f64");
  return decode<double>(e);
}

std::vector<std::uint8_t> TensorContainer::get_u8(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::U8) throw Error(Errc::ShapeMismatch, "tensor '" + name + "' is not u8");
  return e.bytes;
}

std::vector<std::int32_t> TensorContainer::get_i32(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::I32) throw Error(Errc::ShapeMismatch, "tensor '" + name + "' is not i32");
  return decode<std::int32_t>(e);
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  nlohmann::json index = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, e] : entries_) {
    index[name] = {{"dtype", dtype_name(e.dtype)},
                   {"shape", e.shape},
                   {"offset", offset},
                   {"length", e.bytes.size()}};
    offset = align_up(offset + e.bytes.size());
  }
  const std::string text = index.dump();
  const std::size_t region = align_up(kContainerMagic.size() + 8 + text.size());

  std::vector<std::uint8_t> out(region + offset, 0);
  std::memcpy(out.data(), kContainerMagic.data(), kContainerMagic.size());
  const std::uint64_t len = text.size();
  std::memcpy(out.data() + 8, &len, 8);
  std::memcpy(out.data() + 16, text.data(), text.size());
  for (const auto& [name, e] : entries_) {
    const std::size_t at = region + index[name]["offset"].get<std::size_t>();
    if (!e.bytes.empty()) std::memcpy(out.data() + at, e.bytes.data(), e.bytes.size());
  }
  return out;
}

TensorContainer TensorContainer::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic.data(), 8) != 0) {
    throw Error(Errc::IOFailure, "not a tensor container (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw Error(Errc::IOFailure, "truncated container index");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::IOFailure, std::string("container index: ") + ex.what());
  }
  const std::size_t region = align_up(16 + len);
  TensorContainer c;
  try {
    for (const auto& [name, meta] : index.items()) {
      TensorEntry e;
      e.dtype = dtype_from_name(meta.at("dtype").get<std::string>());
      e.shape = meta.at("shape").get<std::vector<std::size_t>>();
      const auto offset = meta.at("offset").get<std::size_t>();
      const auto length = meta.at("length").get<std::size_t>();
      if (offset % kContainerAlign != 0 || region + offset + length > bytes.size() ||
          e.elements() * dtype_size(e.dtype) != length) {
        throw Error(Errc::IOFailure, "container entry '" + name + "' is malformed");
      }
      e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(region + offset),
                     bytes.begin() + static_cast<std::ptrdiff_t>(region + offset + length));
      c.entries_[name] = std::move(e);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::IOFailure, std::string("container index: ") + ex.what());
  }
  return c;
}

void TensorContainer::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IOFailure, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(Errc::IOFailure, "short write to '" + path.string() + "'");
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::MissingArtifact, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace sq
