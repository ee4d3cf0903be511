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

#include "sq/config.hpp"
#include "sq/error.hpp"

using nlohmann::json;

TEST_CASE("missing keys keep defaults") {
  const auto cfg = sq::config_from_json(json::object());
  const auto def = sq::default_config();
  CHECK(sq::config_hash(cfg) == sq::config_hash(def));
  CHECK(cfg.model.d_in == 64);
  CHECK(cfg.model.tokens == 16);
  CHECK(cfg.model.heads == 4);
  CHECK(cfg.calibration.timesteps == 10);
  CHECK(cfg.calibration.samples_per_t == 8);
  CHECK(cfg.quant.weight_bits == 4);
  CHECK(cfg.quant.act_bits == 8);
  CHECK(cfg.quant.weight_granularity == sq::Granularity::PerOutputChannel);
  CHECK(cfg.quant.act_granularity == sq::Granularity::PerTensor);
}

TEST_CASE("unknown keys are errors") {
  CHECK_THROWS_AS(sq::config_from_json(json{{"sede", 3}}), sq::Error);
  CHECK_THROWS_AS(sq::config_from_json(json{{"quant", {{"weight_bit", 4}}}}), sq::Error);
  CHECK_THROWS_AS(sq::config_from_json(json{{"model", {{"drift", {{"knd", "flat"}}}}}}), sq::Error);
  try {
    sq::config_from_json(json{{"balancing", {{"sssc", true}}}});
  } catch (const sq::Error& e) {
    CHECK(e.code() == sq::Errc::ConfigError);
  }
}

TEST_CASE("invalid values are rejected") {
  for (const auto& bad : {json{{"quant", {{"weight_bits", 9}}}}, json{{"quant", {{"act_bits", 1}}}},
                          json{{"balancing", {{"eps", 0.0}}}}, json{{"calibration", {{"timesteps", 0}}}},
                          json{{"model", {{"heads", 5}}}}, json{{"quant", {{"fitter", "best"}}}},
                          json{{"quant", {{"shrink_grid", {1.5}}}}}, json{{"seed", "x"}}}) {
    CHECK_THROWS_AS(sq::config_from_json(bad), sq::Error);
  }
  CHECK_NOTHROW(sq::config_from_json(json{{"quant", {{"weight_bits", 32}, {"act_bits", 32}}}}));
}

TEST_CASE("json round trip and hash") {
  auto cfg = sq::default_config();
  cfg.seed = 99;
  cfg.quant.fitter = sq::Fitter::MinMax;
  cfg.model.drift = {sq::DriftKind::Peak, 3.0};
  const auto back = sq::config_from_json(sq::config_to_json(cfg));
  CHECK(sq::config_to_json(back) == sq::config_to_json(cfg));
  CHECK(sq::config_hash(back) == sq::config_hash(cfg));
  CHECK(sq::config_hash(cfg).size() == 16);

  auto moved = cfg;
  moved.artifacts = "elsewhere";
  CHECK(sq::config_hash(moved) == sq::config_hash(cfg));
  auto other = cfg;
  other.seed = 100;
  CHECK(sq::config_hash(other) != sq::config_hash(cfg));

  CHECK(sq::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(sq::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
