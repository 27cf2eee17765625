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

#include "fswa/error.hpp"
#include "fswa/nets.hpp"

namespace fswa {

/// Cosine annealing for the first `ell` epochs, then a cycle that replays
/// the rates of epochs [ell - cycle_len, ell).
struct ScheduleSpec {
  double eta0 = 0.1;
  double ell0 = 210.0;  // cosine half-period
  double ell = 180.0;   // cycle start
  double cycle_len = 30.0;

  void validate() const;
};

/// Linear ramp of the consistency weight from 0 to lambda_max.
struct RampSpec {
  double lambda_max = 100.0;
  double ramp_epochs = 5.0;

  void validate() const;
};

/// The underlying cosine annealing curve 0.5 eta0 (1 + cos(pi i / ell0)).
double cosine_rate(const ScheduleSpec& s, double i);

/// Cosine annealing up to `ell`, then the window [ell - c, ell) repeated.
double lr_at(const ScheduleSpec& s, double epoch_pos);
double lambda_at(const RampSpec& r, double epoch_pos);

struct OptimizerSpec {
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = true;

  void validate() const;
};

struct OptState {
  ParamVector velocity;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = true;

  static OptState for_params(std::size_t n, const OptimizerSpec& spec);
};

struct StepResult {
  ParamVector params;
  OptState state;
};

/// One SGD step:
///   g' = grad + weight_decay * w
///   v  = momentum * v + g'
///   w  = w - lr * (nesterov ? momentum * v + g' : v)
/// Throws NonFiniteError on a non-finite gradient.
StepResult sgd_step(const ParamVector& w, const ParamVector& grad, double lr, const OptState& state);

}  // namespace fswa
