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

#include "fswa/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace fswa {

TeacherState ema_update(const TeacherState& teacher, const ParamVector& student) {
  require_same_length(teacher.weights, student, "ema_update");
  const double a = teacher.alpha;
  std::vector<double> w(student.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = a * teacher.weights[i] + (1.0 - a) * student[i];
  return {ParamVector(std::move(w)), a};
}

namespace {

double safe_log(double p) { return std::log(std::max(p, std::numeric_limits<double>::min())); }

void require_same_shape(const ad::Tensor& a, const ad::Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ad::ShapeError(fmt::format("{}: shapes {} and {} differ", what, ad::shape_string(a.shape()),
                                     ad::shape_string(b.shape())));
  }
}

}  // namespace

double consistency_loss(const Predictions& student, const Predictions& teacher, Divergence divergence) {
  require_same_shape(student.probabilities, teacher.probabilities, "consistency_loss");
  const auto f = student.probabilities.values();
  const auto g = teacher.probabilities.values();
  double total = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (divergence == Divergence::Mse) {
      total += (f[i] - g[i]) * (f[i] - g[i]);
    } else if (f[i] > 0.0) {
      total += f[i] * (std::log(f[i]) - safe_log(g[i]));
    }
  }
  return total / static_cast<double>(student.probabilities.rows());
}

double cross_entropy(const Predictions& predictions, std::span<const std::size_t> labels) {
  if (predictions.rows() != labels.size() || labels.empty()) {
    throw LengthMismatch("cross_entropy: label count does not match predictions");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) total -= safe_log(predictions.probabilities.at(r, labels[r]));
  return total / static_cast<double>(labels.size());
}

ad::Tensor stack_batches(const LabeledBatch& labeled, const std::optional<ad::Tensor>& unlabeled) {
  if (!unlabeled) return labeled.x;
  if (unlabeled->cols() != labeled.x.cols()) {
    throw ad::ShapeError("labeled and unlabeled batches have different widths");
  }
  std::vector<double> values = labeled.x.data();
  values.insert(values.end(), unlabeled->values().begin(), unlabeled->values().end());
  return ad::Tensor::matrix(labeled.x.rows() + unlabeled->rows(), labeled.x.cols(), std::move(values));
}

Predictions teacher_predictions(const ParamVector& teacher_weights, const LossContext& ctx, const ad::Tensor& stacked,
                                std::uint64_t seed) {
  PerturbationSpec p = *ctx.perturbation;
  p.dropout = p.dropout && ctx.config->teacher_dropout;
  return forward(teacher_weights, *ctx.spec, stacked, &p, seed);
}

namespace {

LossEvaluation evaluate_loss(const ParamVector& student, const Predictions* targets, const LabeledBatch& labeled,
                             const std::optional<ad::Tensor>& unlabeled, const LossContext& ctx, double lambda,
                             std::uint64_t student_seed, bool with_gradients) {
  const MlpSpec& spec = *ctx.spec;
  if (labeled.y.empty()) throw Error("empty_batch", "total_loss needs a non-empty labeled batch");
  if (labeled.x.rows() != labeled.y.size()) {
    throw LengthMismatch(fmt::format("labeled batch has {} rows but {} labels", labeled.x.rows(), labeled.y.size()));
  }
  const ad::Tensor stacked = stack_batches(labeled, unlabeled);
  const std::size_t rows = stacked.rows();
  const std::size_t classes = spec.num_classes();
  ctx.perturbation->validate(spec.input_dim());

  MlpGraphOptions options{.rows = rows, .params_require_grad = with_gradients};
  if (ctx.perturbation->dropout) options.dropout_seed = dropout_seed(student_seed);
  MlpGraph graph = build_mlp_graph(spec, options);
  ad::Tape& tape = graph.tape;

  std::vector<double> onehot(rows * classes, 0.0);
  for (std::size_t r = 0; r < labeled.y.size(); ++r) {
    if (labeled.y[r] >= classes) throw Error("invalid_label", fmt::format("label {} >= class count {}", labeled.y[r], classes));
    onehot[r * classes + labeled.y[r]] = 1.0;
  }
  const auto mask = tape.constant(ad::Tensor::matrix(rows, classes, std::move(onehot)), "labels");
  const auto ce = tape.scale(tape.sum(tape.mul(mask, graph.log_probabilities)),
                             -1.0 / static_cast<double>(labeled.y.size()));
  tape.output("ce", ce);

  if (targets != nullptr) {
    require_same_shape(targets->probabilities, ad::Tensor::zeros({rows, classes}), "teacher targets");
    ad::NodeId cons = 0;
    if (ctx.config->divergence == Divergence::Mse) {
      const auto g = tape.constant(targets->probabilities, "teacher");
      cons = tape.sum(tape.square(tape.sub(graph.probabilities, g)));
    } else {
      std::vector<double> log_g(targets->probabilities.size());
      for (std::size_t i = 0; i < log_g.size(); ++i) log_g[i] = safe_log(targets->probabilities[i]);
      const auto lg = tape.constant(ad::Tensor::matrix(rows, classes, std::move(log_g)), "teacher_log");
      cons = tape.sum(tape.mul(graph.probabilities, tape.sub(graph.log_probabilities, lg)));
    }
    tape.output("cons", tape.scale(cons, 1.0 / static_cast<double>(rows)));
  }

  ad::Bindings bindings = bind_params(spec, student, with_gradients);
  bindings.emplace("x", perturb_inputs(stacked, *ctx.perturbation, noise_seed(student_seed)));
  const ad::Evaluation ev = ad::evaluate(tape, bindings);

  LossEvaluation result;
  result.parts.lambda = lambda;
  result.parts.ce = ev.output("ce").item();
  result.parts.cons = targets != nullptr ? ev.output("cons").item() : 0.0;
  result.parts.total = result.parts.ce + lambda * result.parts.cons;
  if (!std::isfinite(result.parts.total)) throw ad::NonFiniteError("total loss is non-finite");

  if (with_gradients) {
    LossGradients grads;
    grads.ce = gather_param_gradient(spec, ad::backward(ev, {{"ce", ad::Tensor::scalar(1.0)}}));
    grads.cons = targets != nullptr
                     ? gather_param_gradient(spec, ad::backward(ev, {{"cons", ad::Tensor::scalar(1.0)}}))
                     : ParamVector::zeros(student.size());
    grads.total = step_along(grads.ce, grads.cons, lambda);
    result.gradients = std::move(grads);
  }
  return result;
}

}  // namespace

LossEvaluation total_loss_with_targets(const ParamVector& student, const Predictions& targets,
                                       const LabeledBatch& labeled, const std::optional<ad::Tensor>& unlabeled,
                                       const LossContext& ctx, double lambda, std::uint64_t student_seed,
                                       bool with_gradients) {
  return evaluate_loss(student, &targets, labeled, unlabeled, ctx, lambda, student_seed, with_gradients);
}

LossEvaluation total_loss(const ParamVector& student, const ParamVector& teacher_weights, const LabeledBatch& labeled,
                          const std::optional<ad::Tensor>& unlabeled, const LossContext& ctx, double epoch_pos,
                          const StepSeeds& seeds, bool with_gradients) {
  const TeacherMode mode = ctx.config->teacher_mode;
  if (mode == TeacherMode::None) {
    return evaluate_loss(student, nullptr, labeled, std::nullopt, ctx, 0.0, seeds.student, with_gradients);
  }
  const double lambda = lambda_at(ctx.config->lambda_ramp, epoch_pos);
  const ParamVector& source = mode == TeacherMode::Self ? student : teacher_weights;
  const Predictions targets = teacher_predictions(source, ctx, stack_batches(labeled, unlabeled), seeds.teacher);
  return evaluate_loss(student, &targets, labeled, unlabeled, ctx, lambda, seeds.student, with_gradients);
}

}  // namespace fswa
