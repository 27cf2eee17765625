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

// Experiment configuration files: UTF-8 text, one `key = value` per line,
// grouped under `[section]` headers. `#` starts a comment.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "fswa/error.hpp"
#include "fswa/train.hpp"

namespace fswa {

class ConfigError : public Error {
 public:
  ConfigError(std::size_t line, const std::string& key, const std::string& message);

  std::size_t line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

/// Parses configuration text. Relative IDX paths resolve against `base_dir`.
/// Input and output layer widths follow the dataset and are filled in by
/// `resolve_for_dataset` once the data is loaded.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

ExperimentConfig load_config(const std::filesystem::path& path);

/// Completes a parsed config against the loaded data: sets the first and last
/// layer widths to the feature dimension and class count, and converts an
/// epoch-based fast-SWA stride into steps.
void resolve_for_dataset(ExperimentConfig& config, const DatasetSplit& split);

}  // namespace fswa
