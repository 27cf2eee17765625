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

// Independent reference implementations used as test oracles. Nothing here
// calls into the tape engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "fswa/data.hpp"
#include "fswa/nets.hpp"
#include "fswa/rng.hpp"

namespace fswa::testing {

/// Central differences, written out independently of the library helper.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> w, double h) {
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = f(w);
    w[i] = keep - h;
    const double down = f(w);
    w[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Central differences with one Richardson step (the five-point stencil):
/// truncation error O(h^4), so a larger h keeps roundoff small.
inline std::vector<double> richardson_differences(const std::function<double(const std::vector<double>&)>& f,
                                                  const std::vector<double>& w, double h) {
  const auto coarse = central_differences(f, w, h);
  const auto fine = central_differences(f, w, h / 2.0);
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (4.0 * fine[i] - coarse[i]) / 3.0;
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Plain-loop MLP forward pass returning logits, plus the smallest absolute
/// hidden pre-activation (distance to a ReLU kink).
struct NaiveForward {
  std::vector<std::vector<double>> logits;
  double min_abs_preactivation = std::numeric_limits<double>::infinity();
};

inline NaiveForward naive_forward(const MlpSpec& spec, std::span<const double> w,
                                  const std::vector<std::vector<double>>& xs) {
  NaiveForward out;
  const auto layout = layer_layout(spec);
  for (const auto& x : xs) {
    std::vector<double> a = x;
    for (std::size_t l = 0; l < layout.size(); ++l) {
      const auto& s = layout[l];
      std::vector<double> z(s.fan_out);
      for (std::size_t j = 0; j < s.fan_out; ++j) {
        double acc = w[s.bias_offset + j];
        for (std::size_t i = 0; i < s.fan_in; ++i) acc += a[i] * w[s.weight_offset + i * s.fan_out + j];
        z[j] = acc;
      }
      if (l + 1 < layout.size()) {
        for (double& v : z) {
          out.min_abs_preactivation = std::min(out.min_abs_preactivation, std::abs(v));
          v = spec.hidden_activation == Activation::Relu ? std::max(0.0, v) : std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);
        }
      }
      a = std::move(z);
    }
    out.logits.push_back(std::move(a));
  }
  return out;
}

inline std::vector<double> naive_softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) total += (p[k] = std::exp(z[k] - m));
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<std::vector<double>> rows_of(const ad::Tensor& t) {
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r].push_back(t.at(r, c));
  return out;
}

inline std::vector<double> two_pass_mean(const std::vector<std::vector<double>>& xs) {
  std::vector<double> sum(xs.front().size(), 0.0);
  for (const auto& x : xs)
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += x[i];
  for (double& v : sum) v /= static_cast<double>(xs.size());
  return sum;
}

inline ad::Tensor random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng, double scale = 1.0) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = scale * rng.normal();
  return ad::Tensor::matrix(rows, cols, std::move(v));
}

inline double one_nn_error(const LabeledSet& train, const LabeledSet& test) {
  std::size_t wrong = 0;
  const std::size_t d = train.x.cols();
  for (std::size_t i = 0; i < test.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (std::size_t j = 0; j < train.rows(); ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) dist += std::pow(test.x.at(i, c) - train.x.at(j, c), 2);
      if (dist < best) {
        best = dist;
        label = train.y[j];
      }
    }
    wrong += label != test.y[i] ? 1 : 0;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.rows());
}

}  // namespace fswa::testing
