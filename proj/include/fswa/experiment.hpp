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

#include <filesystem>
#include <optional>
#include <string>

#include "fswa/geometry.hpp"
#include "fswa/train.hpp"

namespace fswa {

/// Environment variable that, when set, relocates relative output
/// directories under its value.
inline constexpr const char* kOutputRootEnv = "FSWA_OUTPUT_ROOT";

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

struct RunOutcome {
  std::filesystem::path output_dir;
  std::optional<std::string> diverged;  // reason, when training aborted
  std::size_t epochs_completed = 0;
};

/// Loads data, trains, and writes metrics.csv, the final checkpoints
/// (student, teacher, one per averager), snapshots and requested reports.
/// On divergence writes the partial metrics, the last good student and a
/// DIVERGED marker, then reports the reason in the outcome.
RunOutcome run_experiment(ExperimentConfig config);

/// Writes the geometry reports listed in `config.reports` for a finished run.
void write_reports(const ExperimentConfig& config, const DatasetSplit& split, const TrainResult& result,
                   const std::filesystem::path& dir);

/// Minimal CSV builder; numbers use a fixed `%.12g`-style format so output
/// is byte-stable.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  CsvTable& cell(const std::string& text);
  CsvTable& cell(double value);
  CsvTable& cell(std::size_t value);
  void end_row();
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::string> current_;
};

struct NamedModel {
  std::string name;
  ParamVector params;
};

std::string rays_csv(const std::vector<std::pair<std::string, RayProfile>>& rays);
std::string gains_csv(const std::vector<NamedModel>& models, const MlpSpec& spec, const LabeledSet& eval);
std::string trace_csv(const std::vector<NamedModel>& models, const MlpSpec& spec, const ad::Tensor& inputs,
                      const TraceOptions& options);
std::string hessian_csv(const HessianDecomp& d);
std::string simiter_csv(const CrossoverReport& report);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fswa
