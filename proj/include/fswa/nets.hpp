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
#include <span>
#include <vector>

#include "fswa/error.hpp"
#include "fswa/perturbation.hpp"
#include "fswa/tensor.hpp"

namespace fswa {

enum class Activation { Relu, Softplus };

struct MlpSpec {
  /// Input dimension, hidden widths, class count.
  std::vector<std::size_t> layer_widths;
  Activation hidden_activation = Activation::Relu;
  double dropout_rate = 0.0;

  void validate() const;
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t num_classes() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  std::size_t param_count() const;
};

/// Location of one dense layer inside a ParamVector: a fan_in x fan_out
/// weight matrix (row-major) followed by fan_out biases.
struct LayerSlice {
  std::size_t weight_offset;
  std::size_t bias_offset;
  std::size_t fan_in;
  std::size_t fan_out;
};

std::vector<LayerSlice> layer_layout(const MlpSpec& spec);

/// Flat, layer-major view of all model weights.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  static ParamVector zeros(std::size_t n) { return ParamVector(std::vector<double>(n, 0.0)); }

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

class LengthMismatch : public Error {
 public:
  explicit LengthMismatch(const std::string& message) : Error("length_mismatch", message) {}
};

void require_same_length(const ParamVector& a, const ParamVector& b, const char* what);

ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector subtract(const ParamVector& a, const ParamVector& b);
ParamVector scale(const ParamVector& a, double factor);
/// t * b + (1 - t) * a; t = 0 is `a`.
ParamVector interpolate(const ParamVector& a, const ParamVector& b, double t);
/// a + s * direction
ParamVector step_along(const ParamVector& a, const ParamVector& direction, double s);
double dot(const ParamVector& a, const ParamVector& b);
double norm(const ParamVector& a);
double distance(const ParamVector& a, const ParamVector& b);

/// Row-stochastic class probabilities and their argmax labels (ties go to
/// the lowest class index).
struct Predictions {
  ad::Tensor probabilities;
  std::vector<std::size_t> labels;

  static Predictions from_probabilities(ad::Tensor probabilities);
  std::size_t rows() const { return labels.size(); }
};

/// Fraction of rows whose predicted label differs from `truth`.
double error_rate(const Predictions& predictions, std::span<const std::size_t> truth);

/// Glorot-uniform weights, zero biases; deterministic per seed.
ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed);

/// What the network head exposes.
enum class Head { Probabilities, Logits };

struct MlpGraphOptions {
  std::size_t rows = 1;
  bool params_require_grad = false;
  bool input_requires_grad = false;
  /// Apply dropout after each hidden activation with masks derived from
  /// this seed. Ignored when the spec's dropout rate is zero.
  std::optional<std::uint64_t> dropout_seed;
};

/// Tape for a batch forward pass. Inputs are "x" (rows x input_dim) and
/// "W<l>", "b<l>" per layer.
struct MlpGraph {
  ad::Tape tape;
  ad::NodeId input = 0;
  ad::NodeId logits = 0;
  ad::NodeId probabilities = 0;
  ad::NodeId log_probabilities = 0;
};

MlpGraph build_mlp_graph(const MlpSpec& spec, const MlpGraphOptions& options);

/// Binds a ParamVector to the "W<l>"/"b<l>" inputs of an MlpGraph.
ad::Bindings bind_params(const MlpSpec& spec, const ParamVector& params, bool requires_grad = false);

/// Packs per-layer gradients returned by ad::backward into ParamVector order.
ParamVector gather_param_gradient(const MlpSpec& spec, const ad::Bindings& grads);

/// Splits a ParamVector into per-layer tensors and back.
std::vector<ad::Tensor> unflatten(const MlpSpec& spec, const ParamVector& params);
ParamVector flatten(const MlpSpec& spec, std::span<const ad::Tensor> layers);

/// Forward pass. With `perturb`, input noise/translation and dropout are
/// drawn from `seed`; without it the pass is deterministic and dropout-free.
Predictions forward(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& batch,
                    const PerturbationSpec* perturb = nullptr, std::uint64_t seed = 0);

/// Pre-softmax outputs of a clean forward pass.
ad::Tensor forward_logits(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& batch);

/// Seeds for the noise and dropout streams of one perturbed pass.
std::uint64_t noise_seed(std::uint64_t seed);
std::uint64_t dropout_seed(std::uint64_t seed);

}  // namespace fswa
