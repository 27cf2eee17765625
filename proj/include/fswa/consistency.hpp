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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fswa/nets.hpp"
#include "fswa/perturbation.hpp"
#include "fswa/schedule.hpp"

namespace fswa {

enum class Divergence { Mse, Kl };

/// Where consistency targets come from. `None` trains on the supervised
/// cross-entropy only and is the baseline the consistency models are
/// compared against.
enum class TeacherMode { None, Self, Ema };

struct ConsistencyConfig {
  Divergence divergence = Divergence::Mse;
  TeacherMode teacher_mode = TeacherMode::Self;
  RampSpec lambda_ramp;
  /// Whether the teacher pass also uses dropout. Input noise is always
  /// applied to both passes, drawn independently.
  bool teacher_dropout = true;
};

struct TeacherState {
  ParamVector weights;
  double alpha = 0.97;
};

/// w_g <- alpha * w_g + (1 - alpha) * w_f, elementwise.
TeacherState ema_update(const TeacherState& teacher, const ParamVector& student);

/// Batch mean of ||f - g||^2 (MSE) or KL(f || g) (natural log). The teacher
/// predictions are treated as constants.
double consistency_loss(const Predictions& student, const Predictions& teacher, Divergence divergence);

/// Mean cross-entropy of predictions against integer labels.
double cross_entropy(const Predictions& predictions, std::span<const std::size_t> labels);

struct LabeledBatch {
  ad::Tensor x;
  std::vector<std::size_t> y;
};

/// Seeds for one optimizer step: the student and teacher passes draw their
/// perturbations independently.
struct StepSeeds {
  std::uint64_t student = 0;
  std::uint64_t teacher = 1;
};

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double cons = 0.0;
  double lambda = 0.0;
};

struct LossGradients {
  ParamVector ce;
  ParamVector cons;   // gradient of the unweighted consistency term
  ParamVector total;  // ce + lambda * cons
};

struct LossEvaluation {
  LossParts parts;
  std::optional<LossGradients> gradients;
};

/// Everything the student/teacher loss needs besides the weights.
struct LossContext {
  const MlpSpec* spec = nullptr;
  const ConsistencyConfig* config = nullptr;
  const PerturbationSpec* perturbation = nullptr;
};

/// Teacher predictions on the stacked batch [labeled.x; unlabeled], computed
/// with the teacher's own perturbation stream.
Predictions teacher_predictions(const ParamVector& teacher_weights, const LossContext& ctx, const ad::Tensor& stacked,
                                std::uint64_t seed);

/// Stacks the labeled and (optional) unlabeled inputs row-wise.
ad::Tensor stack_batches(const LabeledBatch& labeled, const std::optional<ad::Tensor>& unlabeled);

/// L = mean CE over the labeled batch + lambda(epoch_pos) * mean consistency
/// over the union of both batches. Gradients flow through the student only.
/// In `Self` mode the teacher weights are the student weights; in `None`
/// mode the consistency part is skipped and reported as 0.
LossEvaluation total_loss(const ParamVector& student, const ParamVector& teacher_weights, const LabeledBatch& labeled,
                          const std::optional<ad::Tensor>& unlabeled, const LossContext& ctx, double epoch_pos,
                          const StepSeeds& seeds, bool with_gradients = true);

/// Same loss against caller-supplied teacher predictions (rows must match
/// the stacked batch).
LossEvaluation total_loss_with_targets(const ParamVector& student, const Predictions& targets,
                                       const LabeledBatch& labeled, const std::optional<ad::Tensor>& unlabeled,
                                       const LossContext& ctx, double lambda, std::uint64_t student_seed,
                                       bool with_gradients = true);

}  // namespace fswa
