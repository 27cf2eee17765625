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

#include <cmath>

#include "doctest.h"
#include "fswa/consistency.hpp"
#include "support.hpp"

using namespace fswa;

namespace {

Predictions preds(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Predictions::from_probabilities(ad::Tensor::matrix(rows, cols, std::move(v)));
}

ParamVector random_params(std::size_t n, CounterRng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return ParamVector(std::move(v));
}

// Oracle loss from plain loops: mean CE over labeled rows plus lambda times
// the mean divergence over all rows against fixed teacher probabilities.
double oracle_loss(const MlpSpec& spec, const std::vector<double>& w, const std::vector<std::vector<double>>& xs,
                   const std::vector<std::size_t>& labels, const std::vector<std::vector<double>>& teacher,
                   Divergence div, double lambda) {
  const auto fwd = testing::naive_forward(spec, w, xs);
  double ce = 0.0, cons = 0.0;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const auto p = testing::naive_softmax(fwd.logits[r]);
    if (r < labels.size()) ce -= std::log(p[labels[r]]);
    for (std::size_t k = 0; k < p.size(); ++k) {
      cons += div == Divergence::Mse ? std::pow(p[k] - teacher[r][k], 2) : p[k] * (std::log(p[k]) - std::log(teacher[r][k]));
    }
  }
  return ce / static_cast<double>(labels.size()) + lambda * cons / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("consistency loss examples") {
  const auto a = preds(1, 2, {1.0, 0.0});
  const auto b = preds(1, 2, {0.0, 1.0});
  CHECK(consistency_loss(a, b, Divergence::Mse) == 2.0);
  const auto c = preds(2, 3, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1});
  CHECK(consistency_loss(c, c, Divergence::Mse) == 0.0);
  CHECK(consistency_loss(c, c, Divergence::Kl) == 0.0);
  CHECK_THROWS_AS(consistency_loss(a, c, Divergence::Mse), ad::ShapeError);
  // KL([0.5,0.5] || [0.25,0.75]) in nats.
  const double kl = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(consistency_loss(preds(1, 2, {0.5, 0.5}), preds(1, 2, {0.25, 0.75}), Divergence::Kl) ==
        doctest::Approx(kl).epsilon(1e-14));
}

TEST_CASE("KL and cross-entropy are nonnegative on random distributions") {
  CounterRng rng(21, Stream::Test);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(4), q(4);
    double sp = 0.0, sq = 0.0;
    for (int k = 0; k < 4; ++k) {
      sp += (p[k] = rng.uniform() + 1e-3);
      sq += (q[k] = rng.uniform() + 1e-3);
    }
    for (int k = 0; k < 4; ++k) {
      p[k] /= sp;
      q[k] /= sq;
    }
    CHECK(consistency_loss(preds(1, 4, p), preds(1, 4, q), Divergence::Kl) >= -1e-12);
    CHECK(cross_entropy(preds(1, 4, p), std::vector<std::size_t>{static_cast<std::size_t>(trial % 4)}) >= -1e-12);
  }
}

TEST_CASE("cross-entropy of uniform predictions is ln K") {
  CHECK(cross_entropy(preds(2, 2, {0.5, 0.5, 0.5, 0.5}), std::vector<std::size_t>{0, 1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("EMA update examples and contraction") {
  const ParamVector s({2.0});
  CHECK(ema_update({ParamVector({0.0}), 0.5}, s).weights == ParamVector({1.0}));
  CHECK(ema_update({ParamVector({5.0}), 0.0}, s).weights == s);
  CHECK(ema_update({ParamVector({5.0}), 1.0}, s).weights == ParamVector({5.0}));
  CounterRng rng(22, Stream::Test);
  for (int trial = 0; trial < 100; ++trial) {
    const TeacherState t{random_params(7, rng), rng.uniform()};
    const ParamVector st = random_params(7, rng);
    const auto next = ema_update(t, st);
    CHECK(distance(next.weights, st) == doctest::Approx(t.alpha * distance(t.weights, st)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ema_update({ParamVector({0.0, 1.0}), 0.5}, s), LengthMismatch);
}

TEST_CASE("total loss reductions") {
  const MlpSpec spec{.layer_widths = {2, 6, 2}};
  CounterRng rng(23, Stream::Test);
  const ParamVector w = random_params(spec.param_count(), rng, 0.5);
  const LabeledBatch labeled{testing::random_matrix(4, 2, rng), {0, 1, 1, 0}};
  const std::optional<ad::Tensor> unlabeled = testing::random_matrix(6, 2, rng);
  const PerturbationSpec off{.noise_sigma = 0.0};

  SUBCASE("lambda = 0 leaves pure cross-entropy") {
    const ConsistencyConfig cfg{.teacher_mode = TeacherMode::Ema, .lambda_ramp = {.lambda_max = 0.0}};
    const LossContext ctx{&spec, &cfg, &off};
    const auto r = total_loss(w, random_params(w.size(), rng), labeled, unlabeled, ctx, 3.0, {});
    CHECK(r.parts.total == r.parts.ce);
    CHECK(r.parts.ce == doctest::Approx(cross_entropy(forward(w, spec, labeled.x), labeled.y)).epsilon(1e-14));
    CHECK(r.gradients->total == r.gradients->ce);
  }
  SUBCASE("self teacher without perturbations has exactly zero consistency") {
    const ConsistencyConfig cfg{.teacher_mode = TeacherMode::Self};
    const LossContext ctx{&spec, &cfg, &off};
    for (double pos : {0.0, 1.0, 10.0}) {
      const auto r = total_loss(w, w, labeled, unlabeled, ctx, pos, {});
      CHECK(r.parts.cons == 0.0);
      for (double g : r.gradients->cons.values()) CHECK(g == 0.0);
    }
  }
  SUBCASE("supervised mode ignores the consistency term") {
    const ConsistencyConfig cfg{.teacher_mode = TeacherMode::None};
    const PerturbationSpec noisy{.noise_sigma = 0.5};
    const LossContext ctx{&spec, &cfg, &noisy};
    const auto r = total_loss(w, w, labeled, unlabeled, ctx, 10.0, {});
    CHECK(r.parts.cons == 0.0);
    CHECK(r.parts.total == r.parts.ce);
  }
  SUBCASE("empty labeled batch is an error") {
    const ConsistencyConfig cfg{};
    const LossContext ctx{&spec, &cfg, &off};
    const LabeledBatch empty{ad::Tensor::matrix(1, 2, {0, 0}), {}};
    CHECK_THROWS_AS(total_loss(w, w, empty, unlabeled, ctx, 0.0, {}), Error);
  }
  SUBCASE("lambda follows the ramp") {
    const ConsistencyConfig cfg{.lambda_ramp = {.lambda_max = 100, .ramp_epochs = 5}};
    const LossContext ctx{&spec, &cfg, &off};
    CHECK(total_loss(w, w, labeled, unlabeled, ctx, 2.5, {}, false).parts.lambda == 50.0);
    CHECK(total_loss(w, w, labeled, unlabeled, ctx, 0.0, {}, false).parts.lambda == 0.0);
  }
}

TEST_CASE("loss gradients match central differences of a plain-loop oracle") {
  const double h = 1e-5;
  for (auto div : {Divergence::Mse, Divergence::Kl}) {
    for (int trial = 0; trial < 10; ++trial) {
      CounterRng rng(600 + trial, Stream::Test);
      const MlpSpec spec{.layer_widths = {3, 5, 3}, .hidden_activation = Activation::Softplus};
      const ParamVector w = random_params(spec.param_count(), rng, 0.7);
      const ParamVector teacher = random_params(spec.param_count(), rng, 0.7);
      const LabeledBatch labeled{testing::random_matrix(3, 3, rng), {0, 2, 1}};
      const std::optional<ad::Tensor> unlabeled = testing::random_matrix(4, 3, rng);
      const ConsistencyConfig cfg{.divergence = div, .teacher_mode = TeacherMode::Ema,
                                  .lambda_ramp = {.lambda_max = 3.0, .ramp_epochs = 0}};
      const PerturbationSpec off{};
      const LossContext ctx{&spec, &cfg, &off};
      const auto r = total_loss(w, teacher, labeled, unlabeled, ctx, 0.0, {});

      const ad::Tensor stacked = stack_batches(labeled, unlabeled);
      const auto xs = testing::rows_of(stacked);
      std::vector<std::vector<double>> targets;
      for (const auto& z : testing::naive_forward(spec, teacher.values(), xs).logits) targets.push_back(testing::naive_softmax(z));
      const auto fd = testing::central_differences(
          [&](const std::vector<double>& v) { return oracle_loss(spec, v, xs, labeled.y, targets, div, 3.0); },
          std::vector<double>(w.values().begin(), w.values().end()), h);
      CHECK(r.parts.total == doctest::Approx(oracle_loss(spec, {w.values().begin(), w.values().end()}, xs, labeled.y,
                                                         targets, div, 3.0)).epsilon(1e-12));
      CHECK(testing::max_relative_error(r.gradients->total.values(), fd, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("student gradient never depends on teacher parameters beyond their targets") {
  const MlpSpec spec{.layer_widths = {2, 8, 3}, .dropout_rate = 0.2};
  CounterRng rng(24, Stream::Test);
  const ParamVector w = random_params(spec.param_count(), rng, 0.5);
  const ParamVector teacher_a = random_params(spec.param_count(), rng, 0.5);
  const LabeledBatch labeled{testing::random_matrix(3, 2, rng), {0, 1, 2}};
  const std::optional<ad::Tensor> unlabeled = testing::random_matrix(5, 2, rng);
  const ConsistencyConfig cfg{.teacher_mode = TeacherMode::Ema, .lambda_ramp = {.lambda_max = 10, .ramp_epochs = 0}};
  const PerturbationSpec perturb{.noise_sigma = 0.3};
  const LossContext ctx{&spec, &cfg, &perturb};
  const StepSeeds seeds{101, 202};
  const ad::Tensor stacked = stack_batches(labeled, unlabeled);

  // Frozen targets reproduce the full loss gradient bit for bit.
  const auto full = total_loss(w, teacher_a, labeled, unlabeled, ctx, 1.0, seeds);
  const auto targets = teacher_predictions(teacher_a, ctx, stacked, seeds.teacher);
  const auto frozen = total_loss_with_targets(w, targets, labeled, unlabeled, ctx, 10.0, seeds.student);
  CHECK(full.gradients->total == frozen.gradients->total);

  // Moving the teacher with the same RNG only changes the targets.
  ParamVector teacher_b = teacher_a;
  teacher_b.mutable_values()[0] += 0.25;
  const auto moved = total_loss(w, teacher_b, labeled, unlabeled, ctx, 1.0, seeds);
  const auto moved_frozen = total_loss_with_targets(w, teacher_predictions(teacher_b, ctx, stacked, seeds.teacher),
                                                    labeled, unlabeled, ctx, 10.0, seeds.student);
  CHECK(moved.gradients->total == moved_frozen.gradients->total);
  CHECK(moved.gradients->ce == full.gradients->ce);
}

TEST_CASE("self teacher gradient treats the teacher pass as a constant") {
  const MlpSpec spec{.layer_widths = {2, 6, 2}, .hidden_activation = Activation::Softplus};
  CounterRng rng(25, Stream::Test);
  const ParamVector w = random_params(spec.param_count(), rng, 0.8);
  const LabeledBatch labeled{testing::random_matrix(2, 2, rng), {0, 1}};
  const std::optional<ad::Tensor> unlabeled = testing::random_matrix(4, 2, rng);
  const ConsistencyConfig cfg{.teacher_mode = TeacherMode::Self, .lambda_ramp = {.lambda_max = 1, .ramp_epochs = 0}};
  const PerturbationSpec perturb{.noise_sigma = 0.4};
  const LossContext ctx{&spec, &cfg, &perturb};
  const StepSeeds seeds{7, 8};
  const auto r = total_loss(w, w, labeled, unlabeled, ctx, 0.0, seeds);
  const auto targets = teacher_predictions(w, ctx, stack_batches(labeled, unlabeled), seeds.teacher);
  const std::vector<double> w0(w.values().begin(), w.values().end());

  const auto fd_frozen = testing::central_differences(
      [&](const std::vector<double>& v) {
        return total_loss_with_targets(ParamVector(v), targets, labeled, unlabeled, ctx, 1.0, seeds.student, false).parts.cons;
      },
      w0, 1e-5);
  CHECK(testing::max_relative_error(r.gradients->cons.values(), fd_frozen, 1e-6) < 1e-5);

  const auto fd_through = testing::central_differences(
      [&](const std::vector<double>& v) {
        return total_loss(ParamVector(v), ParamVector(v), labeled, unlabeled, ctx, 0.0, seeds, false).parts.cons;
      },
      w0, 1e-5);
  CHECK(testing::max_relative_error(r.gradients->cons.values(), fd_through, 1e-6) > 1e-2);
}

TEST_CASE("teacher dropout flag") {
  const MlpSpec spec{.layer_widths = {2, 16, 2}, .dropout_rate = 0.5};
  CounterRng rng(26, Stream::Test);
  const ParamVector w = init_mlp(spec, 1);
  const ad::Tensor x = testing::random_matrix(5, 2, rng);
  const PerturbationSpec perturb{.noise_sigma = 0.0};
  ConsistencyConfig cfg{.teacher_dropout = false};
  LossContext ctx{&spec, &cfg, &perturb};
  CHECK(teacher_predictions(w, ctx, x, 3).probabilities == forward(w, spec, x).probabilities);
  cfg.teacher_dropout = true;
  CHECK(teacher_predictions(w, ctx, x, 3).probabilities != forward(w, spec, x).probabilities);
}
