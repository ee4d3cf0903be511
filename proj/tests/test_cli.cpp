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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

int sq_exit(const std::string& args) {
  const std::string cmd = std::string(SQ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  fs::create_directories(dir);
  const auto path = dir / "cfg.json";
  std::ofstream(path) << body;
  return path;
}

const char* kSmall = R"({"model": {"d_in": 16, "tokens": 4, "heads": 2,
  "weight_profile": {"channels": [1], "magnitude": [10.0]},
  "act_profile": {"channels": [2], "magnitude": [6.0]}},
  "calibration": {"timesteps": 3, "samples_per_t": 2}, "eval": {"samples_per_t": 1}})";

}  // namespace

TEST_CASE("cli runs the staged pipeline") {
  const auto dir = fs::temp_directory_path() / "sq_cli_ok";
  fs::remove_all(dir);
  const auto cfg = write_config(dir, kSmall);
  const std::string common = "--config " + cfg.string() + " --artifacts " + (dir / "art").string();
  CHECK(sq_exit("calibrate " + common) == 0);
  CHECK(sq_exit("quantize " + common) == 0);
  CHECK(sq_exit("evaluate " + common) == 0);
  CHECK(sq_exit("verify " + common) == 0);
  CHECK(sq_exit("challenge " + common) == 0);
  CHECK(fs::exists(dir / "art" / "report.json"));
  CHECK(fs::exists(dir / "art" / "per_layer.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes for errors and failed verification") {
  const auto dir = fs::temp_directory_path() / "sq_cli_err";
  fs::remove_all(dir);
  const auto bad = write_config(dir / "bad", R"({"quant": {"wieght_bits": 4}})");
  CHECK(sq_exit("calibrate --config " + bad.string()) == 1);
  CHECK(sq_exit("frobnicate") == 1);
  CHECK(sq_exit("calibrate") == 1);

  const auto cfg = write_config(dir / "ok", kSmall);
  const std::string art = " --artifacts " + (dir / "empty").string();
  CHECK(sq_exit("evaluate --config " + cfg.string() + art) == 1);

  std::string corrupt = kSmall;
  corrupt.insert(corrupt.size() - 1, R"(, "balancing": {"corrupt_bw": true})");
  const auto ccfg = write_config(dir / "corrupt", corrupt);
  const std::string common = "--config " + ccfg.string() + " --artifacts " + (dir / "corrupt" / "art").string();
  CHECK(sq_exit("calibrate " + common) == 0);
  CHECK(sq_exit("quantize " + common) == 0);
  CHECK(sq_exit("verify " + common) == 2);

  fs::create_directories(dir / "locked");
  std::ofstream(dir / "locked" / ".sq.lock") << "";
  CHECK(sq_exit("calibrate --config " + cfg.string() + " --artifacts " + (dir / "locked").string()) == 1);
  fs::remove_all(dir);
}
