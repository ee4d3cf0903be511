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

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <json.hpp>
#include <limits>

#include "gen.hpp"
#include "sq/container.hpp"
#include "sq/error.hpp"

TEST_CASE("container layout") {
  sq::TensorContainer c;
  const std::vector<double> v{1.5, -2.0};
  c.put_f64("b", v);
  c.put_f32("a", sq::MatrixF{{1, 2, 3}, {4, 5, 6}});
  const auto bytes = c.serialize();
  REQUIRE(bytes.size() > 16);
  CHECK(std::memcmp(bytes.data(), "SQTN\0\x01\0\0", 8) == 0);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  const std::string index(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
  const auto j = nlohmann::json::parse(index);
  CHECK(j.at("a").at("dtype") == "f32");
  CHECK(j.at("a").at("shape") == nlohmann::json::array({2, 3}));
  CHECK(j.at("b").at("length") == 16);
  const std::size_t payload = (16 + len + 63) / 64 * 64;
  for (const auto& [name, e] : j.items()) {
    CHECK(e.at("offset").get<std::size_t>() % 64 == 0);
  }
  double first = 0;
  std::memcpy(&first, bytes.data() + payload + j.at("b").at("offset").get<std::size_t>(), 8);
  CHECK(first == 1.5);
}

TEST_CASE("property: every dtype round-trips bit-exactly") {
  gen::Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    sq::TensorContainer c;
    const auto m = rng.matrix<float>(1 + rng.index(9), 1 + rng.index(9));
    std::vector<double> d(1 + rng.index(40));
    for (auto& x : d) x = rng.normal(0, 1e6);
    d[0] = std::numeric_limits<double>::denorm_min();
    std::vector<std::uint8_t> u(12);
    for (auto& x : u) x = std::uint8_t(rng.integer(0, 255));
    std::vector<std::int32_t> i(7);
    for (auto& x : i) x = rng.integer(-1000000, 1000000);
    c.put_f32("m", m);
    c.put_f64("d", d);
    c.put_u8("u", u, {3, 4});
    c.put_i32("i", i);
    const auto bytes = c.serialize();
    const auto back = sq::TensorContainer::parse(bytes);
    CHECK(back == c);
    CHECK(back.serialize() == bytes);
    CHECK(back.get_f32_matrix("m") == m);
    CHECK(back.get_f64("d") == d);
    CHECK(back.get_u8("u") == u);
    CHECK(back.get_i32("i") == i);
  }
}

TEST_CASE("container errors") {
  sq::TensorContainer c;
  c.put_i32("x", std::vector<std::int32_t>{1, 2});
  CHECK_THROWS_AS(c.get_f64("x"), sq::Error);
  CHECK_THROWS_AS(c.get_i32("missing"), sq::Error);
  CHECK_THROWS_AS(c.put_u8("bad", std::vector<std::uint8_t>{1, 2, 3}, {2, 2}), sq::Error);
  auto bytes = c.serialize();
  bytes[0] = 'X';
  CHECK_THROWS_AS(sq::TensorContainer::parse(bytes), sq::Error);
  bytes = c.serialize();
  // The payload is padded to 64 bytes; cut into the tensor itself.
  bytes.resize(bytes.size() - 60);
  CHECK_THROWS_AS(sq::TensorContainer::parse(bytes), sq::Error);
  CHECK_THROWS_AS(sq::TensorContainer::load("/nonexistent/dir/x.sqt"), sq::Error);

  const auto path = std::filesystem::temp_directory_path() / "sq_container_test.sqt";
  c.save(path);
  CHECK(sq::TensorContainer::load(path) == c);
  std::filesystem::remove(path);
}
