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

#include "fswa/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace fswa {

void ScheduleSpec::validate() const {
  const bool ok = eta0 > 0.0 && ell0 > 0.0 && ell > 0.0 && cycle_len > 0.0 && ell <= ell0 &&
                  cycle_len <= ell && std::isfinite(eta0) && std::isfinite(ell0);
  if (!ok) {
    throw Error("invalid_config",
                fmt::format("schedule needs eta0>0, 0<cycle_len<=ell<=ell0 (eta0={}, ell0={}, ell={}, cycle_len={})",
                            eta0, ell0, ell, cycle_len));
  }
}

void RampSpec::validate() const {
  if (!(lambda_max >= 0.0) || !(ramp_epochs >= 0.0)) {
    throw Error("invalid_config", "lambda_max and ramp_epochs must be >= 0");
  }
}

void OptimizerSpec::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("invalid_config", "momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw Error("invalid_config", "weight_decay must be >= 0");
}

double cosine_rate(const ScheduleSpec& s, double i) {
  return 0.5 * s.eta0 * (1.0 + std::cos(std::numbers::pi * i / s.ell0));
}

double lr_at(const ScheduleSpec& s, double epoch_pos) {
  if (epoch_pos < s.ell) return std::max(0.0, cosine_rate(s, std::max(0.0, epoch_pos)));
  const double mapped = s.ell - s.cycle_len + std::fmod(epoch_pos - s.ell, s.cycle_len);
  return std::max(0.0, cosine_rate(s, mapped));
}

double lambda_at(const RampSpec& r, double epoch_pos) {
  if (r.ramp_epochs <= 0.0) return r.lambda_max;
  return r.lambda_max * std::min(1.0, std::max(0.0, epoch_pos) / r.ramp_epochs);
}

OptState OptState::for_params(std::size_t n, const OptimizerSpec& spec) {
  spec.validate();
  return {ParamVector::zeros(n), spec.momentum, spec.weight_decay, spec.nesterov};
}

StepResult sgd_step(const ParamVector& w, const ParamVector& grad, double lr, const OptState& state) {
  require_same_length(w, grad, "sgd_step");
  require_same_length(w, state.velocity, "sgd_step velocity");
  std::vector<double> params(w.values().begin(), w.values().end());
  std::vector<double> velocity(state.velocity.values().begin(), state.velocity.values().end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw ad::NonFiniteError(fmt::format("sgd_step: non-finite gradient at coordinate {}", i));
    }
    const double g = grad[i] + state.weight_decay * params[i];
    velocity[i] = state.momentum * velocity[i] + g;
    const double update = state.nesterov ? state.momentum * velocity[i] + g : velocity[i];
    params[i] -= lr * update;
  }
  OptState next = state;
  next.velocity = ParamVector(std::move(velocity));
  return {ParamVector(std::move(params)), std::move(next)};
}

}  // namespace fswa
