/* Copyright 2026 The Leaffew Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace leaffew {

// Error taxonomy. Fatal conditions throw; user-facing configuration checks
// that should accumulate instead go through run::Diagnostic lists.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct PartitionError : std::runtime_error {
  explicit PartitionError(const std::string& what) : std::runtime_error(what) {}
};

struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

struct ExtractionError : std::runtime_error {
  explicit ExtractionError(const std::string& what) : std::runtime_error(what) {}
};

struct FusionError : std::runtime_error {
  explicit FusionError(const std::string& what) : std::runtime_error(what) {}
};

struct InferenceError : std::runtime_error {
  explicit InferenceError(const std::string& what) : std::runtime_error(what) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

struct ScoringError : std::runtime_error {
  explicit ScoringError(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedError : std::runtime_error {
  explicit UnsupportedError(const std::string& what) : std::runtime_error(what) {}
};

struct StageError : std::runtime_error {
  explicit StageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace leaffew
