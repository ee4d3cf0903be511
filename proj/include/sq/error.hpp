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

#include <stdexcept>
#include <string>

namespace sq {

enum class Errc {
  NonFiniteInput,
  InvalidParams,
  ShapeMismatch,
  EmptyBatch,
  EmptyVector,
  LengthMismatch,
  TooShort,
  GranularityMismatch,
  InvalidShape,
  InvalidProfile,
  ConfigError,
  IOFailure,
  MissingArtifact,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::EmptyVector: return "EmptyVector";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::TooShort: return "TooShort";
    case Errc::GranularityMismatch: return "GranularityMismatch";
    case Errc::InvalidShape: return "InvalidShape";
    case Errc::InvalidProfile: return "InvalidProfile";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IOFailure: return "IOFailure";
    case Errc::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

}  // namespace sq
