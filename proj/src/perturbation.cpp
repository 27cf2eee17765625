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

#include "fswa/perturbation.hpp"

#include <cmath>

#include <fmt/format.h>

namespace fswa {

bool is_orthogonal_projection(const ad::Tensor& p, double tol) {
  if (p.rank() != 2 || p.rows() != p.cols()) return false;
  const std::size_t d = p.rows();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (std::abs(p.at(i, j) - p.at(j, i)) > tol) return false;
      double pp = 0.0;
      for (std::size_t k = 0; k < d; ++k) pp += p.at(i, k) * p.at(k, j);
      if (std::abs(pp - p.at(i, j)) > tol) return false;
    }
  }
  return true;
}

void PerturbationSpec::validate(std::size_t input_dim) const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error("invalid_config", fmt::format("noise_sigma must be >= 0, got {}", noise_sigma));
  }
  if (translate_px > 0 && image_side * image_side != input_dim) {
    throw Error("invalid_config",
                fmt::format("translation needs square images: image_side {} vs input dim {}", image_side,
                            input_dim));
  }
  if (projection) {
    if (projection->rank() != 2 || projection->rows() != input_dim || projection->cols() != input_dim) {
      throw ad::ShapeError(fmt::format("projection must be {0}x{0}, got {1}", input_dim,
                                       ad::shape_string(projection->shape())));
    }
    if (!is_orthogonal_projection(*projection)) {
      throw Error("invalid_config", "projection matrix is not a symmetric idempotent matrix");
    }
  }
}

std::vector<double> sample_projected_normal(std::size_t dim, const std::optional<ad::Tensor>& projection,
                                            CounterRng& rng) {
  std::vector<double> zeta(dim);
  for (double& v : zeta) v = rng.normal();
  if (!projection) return zeta;
  std::vector<double> z(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) z[i] += projection->at(i, j) * zeta[j];
  return z;
}

namespace {

void translate_image(std::span<double> image, std::size_t side, long dx, long dy) {
  std::vector<double> shifted(image.size(), 0.0);
  const long n = static_cast<long>(side);
  for (long r = 0; r < n; ++r) {
    for (long c = 0; c < n; ++c) {
      const long sr = r - dy;
      const long sc = c - dx;
      if (sr < 0 || sr >= n || sc < 0 || sc >= n) continue;
      shifted[static_cast<std::size_t>(r * n + c)] = image[static_cast<std::size_t>(sr * n + sc)];
    }
  }
  std::copy(shifted.begin(), shifted.end(), image.begin());
}

}  // namespace

ad::Tensor perturb_inputs(const ad::Tensor& batch, const PerturbationSpec& spec, std::uint64_t seed) {
  if (spec.noise_sigma == 0.0 && spec.translate_px == 0) return batch;
  const std::size_t rows = batch.rows();
  const std::size_t dim = batch.cols();
  std::vector<double> out = batch.data();
  CounterRng rng(seed, Stream::StudentNoise);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<double> row(out.data() + r * dim, dim);
    if (spec.translate_px > 0) {
      const auto span = static_cast<long>(2 * spec.translate_px + 1);
      const long dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(span))) -
                      static_cast<long>(spec.translate_px);
      const long dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(span))) -
                      static_cast<long>(spec.translate_px);
      translate_image(row, spec.image_side, dx, dy);
    }
    if (spec.noise_sigma > 0.0) {
      const auto z = sample_projected_normal(dim, spec.projection, rng);
      for (std::size_t c = 0; c < dim; ++c) row[c] += spec.noise_sigma * z[c];
    }
  }
  return ad::Tensor(batch.shape(), std::move(out));
}

}  // namespace fswa
