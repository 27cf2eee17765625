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

#include "fswa/nets.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "fswa/rng.hpp"

namespace fswa {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) throw Error("invalid_config", "an MLP needs at least an input and an output width");
  for (std::size_t w : layer_widths) {
    if (w == 0) throw Error("invalid_config", "layer widths must be positive");
  }
  if (num_classes() < 2) throw Error("invalid_config", "the output layer needs at least 2 classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error("invalid_config", fmt::format("dropout rate {} outside [0,1)", dropout_rate));
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
  return n;
}

std::vector<LayerSlice> layer_layout(const MlpSpec& spec) {
  spec.validate();
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l];
    const std::size_t fan_out = spec.layer_widths[l + 1];
    layout.push_back({offset, offset + fan_in * fan_out, fan_in, fan_out});
    offset += fan_in * fan_out + fan_out;
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Parameter algebra

void require_same_length(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.size() != b.size()) {
    throw LengthMismatch(fmt::format("{}: parameter lengths differ ({} vs {})", what, a.size(), b.size()));
  }
}

namespace {

template <typename Fn>
ParamVector zip(const ParamVector& a, const ParamVector& b, const char* what, Fn fn) {
  require_same_length(a, b, what);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(a[i], b[i]);
  return ParamVector(std::move(out));
}

}  // namespace

ParamVector add(const ParamVector& a, const ParamVector& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  return zip(a, b, "subtract", [](double x, double y) { return x - y; });
}

ParamVector scale(const ParamVector& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return ParamVector(std::move(out));
}

ParamVector interpolate(const ParamVector& a, const ParamVector& b, double t) {
  require_same_length(a, b, "interpolate");
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  return zip(a, b, "interpolate", [t](double x, double y) { return t * y + (1.0 - t) * x; });
}

ParamVector step_along(const ParamVector& a, const ParamVector& direction, double s) {
  return zip(a, direction, "step_along", [s](double x, double d) { return x + s * d; });
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_length(a, b, "dot");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
  return total;
}

double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

double distance(const ParamVector& a, const ParamVector& b) {
  require_same_length(a, b, "distance");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(total);
}

// ---------------------------------------------------------------------------
// Predictions

Predictions Predictions::from_probabilities(ad::Tensor probabilities) {
  Predictions p{std::move(probabilities), {}};
  const std::size_t rows = p.probabilities.rows();
  const std::size_t cols = p.probabilities.cols();
  const auto v = p.probabilities.values();
  p.labels.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.subspan(r * cols, cols);
    // max_element returns the first maximum, so ties go to the lowest index.
    p.labels[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return p;
}

double error_rate(const Predictions& predictions, std::span<const std::size_t> truth) {
  if (predictions.rows() != truth.size()) {
    throw LengthMismatch(fmt::format("error_rate: {} predictions vs {} labels", predictions.rows(), truth.size()));
  }
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predictions.labels[i] != truth[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Construction and forward passes

ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  const auto layout = layer_layout(spec);
  std::vector<double> values(spec.param_count(), 0.0);
  CounterRng rng(seed, Stream::Init);
  for (const LayerSlice& layer : layout) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i) {
      values[layer.weight_offset + i] = rng.uniform(-limit, limit);
    }
  }
  return ParamVector(std::move(values));
}

MlpGraph build_mlp_graph(const MlpSpec& spec, const MlpGraphOptions& options) {
  spec.validate();
  MlpGraph g;
  g.input = g.tape.input("x", {options.rows, spec.input_dim()}, options.input_requires_grad);
  ad::NodeId h = g.input;
  const bool use_dropout = options.dropout_seed.has_value() && spec.dropout_rate > 0.0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l];
    const std::size_t fan_out = spec.layer_widths[l + 1];
    const auto w = g.tape.input(fmt::format("W{}", l), {fan_in, fan_out}, options.params_require_grad);
    const auto b = g.tape.input(fmt::format("b{}", l), {fan_out}, options.params_require_grad);
    h = g.tape.add_row(g.tape.matmul(h, w), b);
    if (l + 1 == spec.num_layers()) break;
    h = spec.hidden_activation == Activation::Relu ? g.tape.relu(h) : g.tape.softplus(h);
    if (use_dropout) h = g.tape.dropout(h, spec.dropout_rate, splitmix64(*options.dropout_seed + l));
  }
  g.logits = h;
  g.probabilities = g.tape.softmax(h);
  g.log_probabilities = g.tape.log_softmax(h);
  g.tape.output("logits", g.logits);
  g.tape.output("probabilities", g.probabilities);
  g.tape.output("log_probabilities", g.log_probabilities);
  return g;
}

std::vector<ad::Tensor> unflatten(const MlpSpec& spec, const ParamVector& params) {
  if (params.size() != spec.param_count()) {
    throw LengthMismatch(fmt::format("parameter vector has {} values, spec needs {}", params.size(),
                                     spec.param_count()));
  }
  std::vector<ad::Tensor> layers;
  const auto v = params.values();
  for (const LayerSlice& s : layer_layout(spec)) {
    layers.emplace_back(ad::Shape{s.fan_in, s.fan_out},
                        std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(s.weight_offset),
                                            v.begin() + static_cast<std::ptrdiff_t>(s.bias_offset)));
    layers.emplace_back(ad::Shape{s.fan_out},
                        std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(s.bias_offset),
                                            v.begin() + static_cast<std::ptrdiff_t>(s.bias_offset + s.fan_out)));
  }
  return layers;
}

ParamVector flatten(const MlpSpec& spec, std::span<const ad::Tensor> layers) {
  const auto layout = layer_layout(spec);
  if (layers.size() != 2 * layout.size()) throw LengthMismatch("flatten: wrong number of layer tensors");
  std::vector<double> values;
  values.reserve(spec.param_count());
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const ad::Tensor& w = layers[2 * l];
    const ad::Tensor& b = layers[2 * l + 1];
    if (w.size() != layout[l].fan_in * layout[l].fan_out || b.size() != layout[l].fan_out) {
      throw LengthMismatch(fmt::format("flatten: layer {} has the wrong size", l));
    }
    values.insert(values.end(), w.values().begin(), w.values().end());
    values.insert(values.end(), b.values().begin(), b.values().end());
  }
  return ParamVector(std::move(values));
}

ad::Bindings bind_params(const MlpSpec& spec, const ParamVector& params, bool requires_grad) {
  auto layers = unflatten(spec, params);
  ad::Bindings bindings;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    bindings.emplace(fmt::format("W{}", l), ad::Tensor(layers[2 * l].shape(), layers[2 * l].data(), requires_grad));
    bindings.emplace(fmt::format("b{}", l),
                     ad::Tensor(layers[2 * l + 1].shape(), layers[2 * l + 1].data(), requires_grad));
  }
  return bindings;
}

ParamVector gather_param_gradient(const MlpSpec& spec, const ad::Bindings& grads) {
  std::vector<ad::Tensor> layers;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    layers.push_back(grads.at(fmt::format("W{}", l)));
    layers.push_back(grads.at(fmt::format("b{}", l)));
  }
  return flatten(spec, layers);
}

std::uint64_t noise_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x6E6F697365ULL); }
std::uint64_t dropout_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x64726F70ULL); }

namespace {

void check_batch(const MlpSpec& spec, const ad::Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != spec.input_dim()) {
    throw ad::ShapeError(fmt::format("batch shape {} does not match input dim {}", ad::shape_string(batch.shape()),
                                     spec.input_dim()));
  }
}

}  // namespace

Predictions forward(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& batch,
                    const PerturbationSpec* perturb, std::uint64_t seed) {
  check_batch(spec, batch);
  MlpGraphOptions options{.rows = batch.rows()};
  ad::Bindings bindings = bind_params(spec, params);
  if (perturb != nullptr) {
    perturb->validate(spec.input_dim());
    if (perturb->dropout) options.dropout_seed = dropout_seed(seed);
    bindings.emplace("x", perturb_inputs(batch, *perturb, noise_seed(seed)));
  } else {
    bindings.emplace("x", batch);
  }
  const MlpGraph graph = build_mlp_graph(spec, options);
  const ad::Evaluation ev = ad::evaluate(graph.tape, bindings);
  return Predictions::from_probabilities(ev.value(graph.probabilities));
}

ad::Tensor forward_logits(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& batch) {
  check_batch(spec, batch);
  ad::Bindings bindings = bind_params(spec, params);
  bindings.emplace("x", batch);
  const MlpGraph graph = build_mlp_graph(spec, {.rows = batch.rows()});
  return ad::evaluate(graph.tape, bindings).value(graph.logits);
}

}  // namespace fswa
