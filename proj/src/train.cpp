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

#include "fswa/train.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fswa/rng.hpp"

namespace fswa {

void ExperimentConfig::validate() const {
  model.validate();
  schedule.validate();
  optimizer.validate();
  consistency.lambda_ramp.validate();
  perturbation.validate(model.input_dim());
  for (const auto& policy : averagers) policy.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("invalid_config", "alpha must lie in [0,1]");
  if (labeled_batch == 0 || unlabeled_batch == 0) throw Error("invalid_config", "batch sizes must be positive");
}

DatasetSplit load_dataset(const ExperimentConfig& config) {
  if (!config.idx) return make_dataset(config.data);
  LabeledSet pool = load_idx(config.idx->train_images, config.idx->train_labels);
  LabeledSet test = load_idx(config.idx->test_images, config.idx->test_labels);
  return split_pool(pool, std::move(test), config.data.n_labeled, config.idx->num_classes, config.data.seed);
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<std::string> MetricsLog::header() const {
  std::vector<std::string> h = {"epoch",         "lr",           "lambda",           "train_ce",
                                "train_cons",    "grad_norm_ce", "grad_norm_cons",   "test_err_student",
                                "test_err_teacher"};
  for (const auto& name : averager_names) {
    std::string column = "test_err_" + name;
    std::replace(column.begin(), column.end(), '-', '_');
    h.push_back(column);
  }
  h.emplace_back("diversity_vs_prev_epoch");
  return h;
}

std::string MetricsLog::to_csv() const {
  const auto h = header();
  std::string out = fmt::format("{}\n", fmt::join(h, ","));
  for (const auto& row : rows) {
    out += fmt::format("{},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g}", row.epoch, row.lr,
                       row.lambda, row.train_ce, row.train_cons, row.grad_norm_ce, row.grad_norm_cons,
                       row.test_err_student, row.test_err_teacher);
    for (double err : row.test_err_averagers) out += fmt::format(",{:.12g}", err);
    out += fmt::format(",{:.12g}\n", row.diversity_vs_prev_epoch);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

/// Cycles through shuffled permutations of [0, n); each pass reshuffles
/// with a fresh index of the batch stream.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed, std::uint64_t stream_id) : order_(n), seed_(seed), stream_id_(stream_id) {
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> rows;
    rows.reserve(batch);
    while (rows.size() < batch) {
      if (pos_ == order_.size()) reshuffle();
      rows.push_back(order_[pos_++]);
    }
    return rows;
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    CounterRng rng(seed_, Stream::Batch, (stream_id_ << 40) + passes_++);
    shuffle(order_, rng);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t passes_ = 0;
  std::size_t pos_ = 0;
};

std::vector<std::string> averager_names(const std::vector<CollectionPolicy>& policies) {
  std::vector<std::string> names;
  for (const auto& policy : policies) {
    std::string base = averager_name(policy.kind);
    std::string name = base;
    for (int k = 2; std::find(names.begin(), names.end(), name) != names.end(); ++k) name = fmt::format("{}-{}", base, k);
    names.push_back(name);
  }
  return names;
}

}  // namespace

std::size_t steps_per_epoch(const ExperimentConfig& config, const DatasetSplit& split) {
  const std::size_t n_u = split.unlabeled_rows();
  if (n_u > 0) return (n_u + config.unlabeled_batch - 1) / config.unlabeled_batch;
  return std::max<std::size_t>(1, (split.labeled.rows() + config.labeled_batch - 1) / config.labeled_batch);
}

TrainResult train(const ExperimentConfig& config, const DatasetSplit& split) {
  config.validate();
  if (split.feature_dim != config.model.input_dim() || split.num_classes != config.model.num_classes()) {
    throw Error("invalid_config", fmt::format("model widths {}..{} do not fit data with {} features and {} classes",
                                              config.model.input_dim(), config.model.num_classes(), split.feature_dim,
                                              split.num_classes));
  }

  const MlpSpec& spec = config.model;
  const LossContext ctx{&spec, &config.consistency, &config.perturbation};
  const std::size_t spe = steps_per_epoch(config, split);
  const bool use_unlabeled = split.unlabeled.has_value() && config.consistency.teacher_mode != TeacherMode::None;

  TrainResult result;
  result.steps_per_epoch = spe;
  result.student = init_mlp(spec, config.seed);
  result.teacher = {result.student, config.alpha};
  for (const auto& policy : config.averagers) result.averagers.push_back({ParamVector{}, 0, policy});
  result.metrics.averager_names = averager_names(config.averagers);

  OptState opt = OptState::for_params(result.student.size(), config.optimizer);
  BatchSampler labeled_sampler(split.labeled.rows(), config.seed, 1);
  std::optional<BatchSampler> unlabeled_sampler;
  if (split.unlabeled) unlabeled_sampler.emplace(split.unlabeled->rows(), config.seed, 2);

  auto test_predictions = [&](const ParamVector& w) { return forward(w, spec, split.test.x); };
  Predictions previous = test_predictions(result.student);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    MetricsRow row;
    row.epoch = epoch;
    for (std::size_t step = 0; step < spe; ++step) {
      const std::size_t global_step = epoch * spe + step;
      const double position = static_cast<double>(epoch) + static_cast<double>(step) / static_cast<double>(spe);
      const double lr = lr_at(config.schedule, position);

      const auto labeled_rows = labeled_sampler.next(config.labeled_batch);
      LabeledBatch labeled{gather_rows(split.labeled.x, labeled_rows), {}};
      for (std::size_t r : labeled_rows) labeled.y.push_back(split.labeled.y[r]);
      std::optional<ad::Tensor> unlabeled;
      if (unlabeled_sampler) {
        // Draw even when unused so that every mode sees the same batch stream.
        const auto rows = unlabeled_sampler->next(config.unlabeled_batch);
        if (use_unlabeled) unlabeled = gather_rows(*split.unlabeled, rows);
      }

      const StepSeeds seeds{derive_seed(config.seed, Stream::StudentNoise, global_step),
                            derive_seed(config.seed, Stream::TeacherNoise, global_step)};
      LossEvaluation loss;
      StepResult next;
      try {
        loss = total_loss(result.student, result.teacher.weights, labeled, unlabeled, ctx, position, seeds);
        next = sgd_step(result.student, loss.gradients->total, lr, opt);
        for (double v : next.params.values()) {
          if (!std::isfinite(v)) throw ad::NonFiniteError("parameters became non-finite");
        }
      } catch (const ad::NonFiniteError& e) {
        throw TrainingDiverged(fmt::format("training diverged at epoch {} step {}: {}", epoch, step, e.what()),
                               result, epoch, step);
      }

      result.student = std::move(next.params);
      opt = std::move(next.state);
      if (config.consistency.teacher_mode == TeacherMode::Ema) {
        result.teacher = ema_update(result.teacher, result.student);
      } else {
        result.teacher.weights = result.student;
      }
      for (auto& averager : result.averagers) {
        if (should_collect(averager.policy, epoch, step, spe, config.schedule)) {
          averager = collect(averager, result.student);
        }
      }

      row.lr = lr;
      row.lambda = loss.parts.lambda;
      row.train_ce += loss.parts.ce / static_cast<double>(spe);
      row.train_cons += loss.parts.cons / static_cast<double>(spe);
      row.grad_norm_ce += norm(loss.gradients->ce) / static_cast<double>(spe);
      row.grad_norm_cons += loss.parts.lambda * norm(loss.gradients->cons) / static_cast<double>(spe);
    }

    const Predictions current = test_predictions(result.student);
    row.test_err_student = error_rate(current, split.test.y);
    row.test_err_teacher = config.consistency.teacher_mode == TeacherMode::Ema
                               ? error_rate(test_predictions(result.teacher.weights), split.test.y)
                               : row.test_err_student;
    for (const auto& averager : result.averagers) {
      row.test_err_averagers.push_back(averager.count > 0 ? error_rate(test_predictions(averager.mean), split.test.y)
                                                          : row.test_err_student);
    }
    row.diversity_vs_prev_epoch = 0.0;
    std::size_t differ = 0;
    for (std::size_t i = 0; i < current.rows(); ++i) differ += current.labels[i] != previous.labels[i] ? 1 : 0;
    row.diversity_vs_prev_epoch = static_cast<double>(differ) / static_cast<double>(current.rows());
    previous = current;
    result.metrics.rows.push_back(std::move(row));

    if (std::find(config.snapshot_epochs.begin(), config.snapshot_epochs.end(), epoch) != config.snapshot_epochs.end()) {
      result.snapshots.push_back({epoch, result.student});
    }
  }
  return result;
}

}  // namespace fswa
