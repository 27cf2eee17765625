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
#include <optional>
#include <vector>

#include "fswa/rng.hpp"
#include "fswa/tensor.hpp"

namespace fswa {

/// Input and weight perturbations applied to a forward pass.
///
/// Input noise is x' = x + sigma * z, or x + sigma * P z when a projection
/// P is given (noise confined to the subspace P projects onto). Translation
/// applies to square single-channel images stored row-major; it shifts by a
/// uniform integer offset in [-translate_px, translate_px] along each axis
/// with zero fill. Dropout uses the rate from MlpSpec.
struct PerturbationSpec {
  double noise_sigma = 0.0;
  std::size_t translate_px = 0;
  std::size_t image_side = 0;
  bool dropout = true;
  std::optional<ad::Tensor> projection;

  /// Throws if the spec is inconsistent with inputs of width `input_dim`.
  void validate(std::size_t input_dim) const;
};

/// Checks P*P == P and P^T == P elementwise within `tol`.
bool is_orthogonal_projection(const ad::Tensor& p, double tol = 1e-10);

/// Applies the input-side perturbation to every row of `batch`.
ad::Tensor perturb_inputs(const ad::Tensor& batch, const PerturbationSpec& spec, std::uint64_t seed);

/// Draws z = P * zeta with zeta ~ N(0, I) (or zeta itself without P).
std::vector<double> sample_projected_normal(std::size_t dim, const std::optional<ad::Tensor>& projection,
                                            CounterRng& rng);

}  // namespace fswa
