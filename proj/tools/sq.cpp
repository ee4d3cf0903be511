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

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "sq/config.hpp"
#include "sq/error.hpp"
#include "sq/pipeline.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitVerifyFailed = 2;

void print_report(const sq::EvalReport& rep) {
  std::printf("%-6s %-12s %12s %12s %12s %10s %10s\n", "layer", "role", "w_mse", "a_mse", "out_mse", "so_pre",
              "so_post");
  for (const auto& m : rep.layers) {
    std::printf("%-6s %-12s %12.4e %12.4e %12.4e %10.4f %10.4f\n", sq::layer_name(m.role), sq::role_name(m.role),
                m.w_mse, m.a_mse, m.out_mse, m.so_pre, m.so_post);
  }
  std::printf("block mse %.6e, relative deviation median %.4e max %.4e\n", rep.block_mse, rep.block_rel_dev.median,
              rep.block_rel_dev.max);
  std::printf("folded equivalence: %s (max deviation %.3e, tolerance %.1e)%s\n",
              rep.equivalence.passed ? "ok" : "FAILED", rep.equivalence.max_deviation, rep.equivalence.tolerance,
              rep.proj2_explicit_scale ? " [proj2 uses explicit scale]" : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sq: salience-balanced post-training quantization for DiT blocks"};
  app.set_version_flag("--version", std::string(sq::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string artifacts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--artifacts", artifacts, "artifact directory, overrides output.artifacts");
  };
  auto* cal = app.add_subcommand("calibrate", "generate calibration data and balancing pairs");
  auto* quant = app.add_subcommand("quantize", "fold balancing and fit quantizers");
  auto* eval = app.add_subcommand("evaluate", "compare the quantized block against full precision");
  auto* chal = app.add_subcommand("challenge", "emit salience and error tables for the unbalanced model");
  auto* ver = app.add_subcommand("verify", "check invariants on the current artifacts");
  for (auto* sub : {cal, quant, eval, chal, ver}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitError;
  }

  try {
    sq::PipelineConfig cfg = sq::load_config(config_path);
    if (!artifacts.empty()) cfg.artifacts = artifacts;

    if (cal->parsed()) {
      sq::run_calibrate(cfg);
      std::printf("calibration written to %s\n", cfg.artifacts.c_str());
    } else if (quant->parsed()) {
      sq::run_quantize(cfg);
      std::printf("checkpoint written to %s\n", cfg.artifacts.c_str());
    } else if (eval->parsed()) {
      print_report(sq::run_evaluate(cfg));
    } else if (chal->parsed()) {
      sq::run_challenge(cfg);
      std::printf("challenge tables written to %s\n", cfg.artifacts.c_str());
    } else if (ver->parsed()) {
      const sq::VerifyResult res = sq::run_verify(cfg);
      for (const auto& c : res.checks) {
        std::printf("%-28s %s  %s\n", c.name.c_str(), c.passed ? "ok  " : "FAIL", c.detail.c_str());
      }
      return res.passed() ? 0 : kExitVerifyFailed;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sq: %s\n", e.what());
    return kExitError;
  }
  return 0;
}
