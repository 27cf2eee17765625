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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fswa/averaging.hpp"
#include "fswa/consistency.hpp"
#include "fswa/data.hpp"
#include "fswa/nets.hpp"
#include "fswa/schedule.hpp"

namespace fswa {

/// IDX image/label files used instead of a synthetic dataset.
struct IdxSource {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t num_classes = 10;
};

struct ExperimentConfig {
  DatasetSpec data;
  std::optional<IdxSource> idx;
  MlpSpec model{.layer_widths = {2, 32, 32, 2}};
  ScheduleSpec schedule;
  OptimizerSpec optimizer;
  ConsistencyConfig consistency;
  PerturbationSpec perturbation;
  double alpha = 0.97;
  std::vector<CollectionPolicy> averagers;
  std::size_t fast_swa_stride_epochs = 0;  // nonzero: fast-SWA stride in epochs, resolved once data is loaded
  std::size_t epochs = 0;
  std::size_t labeled_batch = 50;
  std::size_t unlabeled_batch = 50;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::vector<std::size_t> snapshot_epochs;  // save student checkpoints at these epoch ends
  std::vector<std::string> reports;          // geometry reports written after training

  void validate() const;
};

/// Loads the dataset described by the config (synthetic or IDX).
DatasetSplit load_dataset(const ExperimentConfig& config);

struct MetricsRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double train_ce = 0.0;
  double train_cons = 0.0;
  double grad_norm_ce = 0.0;
  double grad_norm_cons = 0.0;
  double test_err_student = 0.0;
  double test_err_teacher = 0.0;
  std::vector<double> test_err_averagers;
  double diversity_vs_prev_epoch = 0.0;
};

struct MetricsLog {
  std::vector<std::string> averager_names;
  std::vector<MetricsRow> rows;

  std::vector<std::string> header() const;
  /// CSV text with a fixed header and fixed number formatting.
  std::string to_csv() const;
};

struct Snapshot {
  std::size_t epoch;
  ParamVector params;
};

struct TrainResult {
  ParamVector student;
  TeacherState teacher;
  std::vector<AveragerState> averagers;
  MetricsLog metrics;
  std::vector<Snapshot> snapshots;
  std::size_t steps_per_epoch = 0;
};

/// Raised when the loss or gradient becomes non-finite. Carries the last
/// student weights that produced a finite step and the metrics so far.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainResult partial, std::size_t epoch, std::size_t step)
      : Error("diverged", message), partial_(std::move(partial)), epoch_(epoch), step_(step) {}

  const TrainResult& partial() const noexcept { return partial_; }
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  TrainResult partial_;
  std::size_t epoch_;
  std::size_t step_;
};

std::size_t steps_per_epoch(const ExperimentConfig& config, const DatasetSplit& split);

/// Runs the full schedule: per step a perturbed student pass, an independently
/// perturbed teacher pass, the total loss, an SGD step, the EMA update (Mean
/// Teacher) and the averager hooks; per epoch one metrics row.
TrainResult train(const ExperimentConfig& config, const DatasetSplit& split);

}  // namespace fswa
