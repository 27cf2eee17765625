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

#include "fswa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fswa/rng.hpp"

namespace fswa::ad {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

namespace {

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::size_t matrix_rows(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t matrix_cols(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (element_count(shape_) != values_.size()) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_string(shape_),
                                 element_count(shape_), values_.size()));
  }
  if (!all_finite(values_)) throw NonFiniteError("tensor contains NaN or Inf");
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }
Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }
Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}
Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}
Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const { return matrix_rows(shape_); }
std::size_t Tensor::cols() const { return matrix_cols(shape_); }

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Dropout: return "dropout";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape construction

NodeId Tape::push(Node node) {
  if (node.name.empty()) node.name = fmt::format("{}#{}", op_name(node.op), nodes_.size());
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw BindingError(fmt::format("unknown node id {}", id));
}

std::string Tape::describe(NodeId id) const {
  const Node& n = nodes_.at(id);
  return fmt::format("node {} '{}' ({})", id, n.name, op_name(n.op));
}

NodeId Tape::input(const std::string& name, Shape shape, bool requires_grad) {
  if (inputs_.contains(name)) throw BindingError("duplicate input name '" + name + "'");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("input '" + name + "' has a zero dimension");
  }
  const NodeId id = push({.op = OpKind::Input, .shape = std::move(shape), .name = name,
                          .requires_grad = requires_grad});
  inputs_[name] = id;
  return id;
}

NodeId Tape::constant(Tensor value, const std::string& name) {
  Node node{.op = OpKind::Constant, .shape = value.shape(), .seed = constants_.size(), .name = name};
  constants_.push_back(std::move(value));
  return push(std::move(node));
}

const Tensor& Tape::constant_value(NodeId id) const {
  const Node& n = node(id);
  if (n.op != OpKind::Constant) throw BindingError(describe(id) + " is not a constant");
  return constants_[n.seed];
}

NodeId Tape::unary(OpKind op, NodeId a, Shape shape) {
  check_id(a);
  return push({.op = op, .lhs = a, .shape = std::move(shape), .requires_grad = nodes_[a].requires_grad});
}

NodeId Tape::elementwise(OpKind op, NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].shape != nodes_[b].shape) {
    throw ShapeError(fmt::format("{}: operand shapes {} and {} differ ({} vs {})", op_name(op),
                                 shape_string(nodes_[a].shape), shape_string(nodes_[b].shape),
                                 describe(a), describe(b)));
  }
  return push({.op = op, .lhs = a, .rhs = b, .shape = nodes_[a].shape,
               .requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad});
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError(fmt::format("matmul: incompatible shapes {} and {} ({} vs {})", shape_string(sa),
                                 shape_string(sb), describe(a), describe(b)));
  }
  return push({.op = OpKind::MatMul, .lhs = a, .rhs = b, .shape = {sa[0], sb[1]},
               .requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad});
}

NodeId Tape::add(NodeId a, NodeId b) { return elementwise(OpKind::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return elementwise(OpKind::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return elementwise(OpKind::Mul, a, b); }

NodeId Tape::add_row(NodeId matrix, NodeId row) {
  check_id(matrix);
  check_id(row);
  const Shape& sm = nodes_[matrix].shape;
  const Shape& sr = nodes_[row].shape;
  const bool row_ok = (sr.size() == 1 && sm.size() == 2 && sr[0] == sm[1]) ||
                      (sr.size() == 2 && sm.size() == 2 && sr[0] == 1 && sr[1] == sm[1]);
  if (!row_ok) {
    throw ShapeError(fmt::format("add_row: cannot add {} to rows of {} ({})", shape_string(sr),
                                 shape_string(sm), describe(matrix)));
  }
  return push({.op = OpKind::AddRow, .lhs = matrix, .rhs = row, .shape = sm,
               .requires_grad = nodes_[matrix].requires_grad || nodes_[row].requires_grad});
}

NodeId Tape::scale(NodeId a, double factor) {
  if (!std::isfinite(factor)) throw NonFiniteError("scale factor must be finite");
  const NodeId id = unary(OpKind::Scale, a, nodes_.at(a).shape);
  nodes_[id].scalar = factor;
  return id;
}

NodeId Tape::relu(NodeId a) { return unary(OpKind::Relu, a, nodes_.at(a).shape); }
NodeId Tape::softplus(NodeId a) { return unary(OpKind::Softplus, a, nodes_.at(a).shape); }

NodeId Tape::dropout(NodeId a, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError(fmt::format("dropout rate {} outside [0,1)", rate));
  const NodeId id = unary(OpKind::Dropout, a, nodes_.at(a).shape);
  nodes_[id].scalar = rate;
  nodes_[id].seed = seed;
  return id;
}

NodeId Tape::softmax(NodeId a) { return unary(OpKind::Softmax, a, nodes_.at(a).shape); }
NodeId Tape::log_softmax(NodeId a) { return unary(OpKind::LogSoftmax, a, nodes_.at(a).shape); }
NodeId Tape::log(NodeId a) { return unary(OpKind::Log, a, nodes_.at(a).shape); }
NodeId Tape::square(NodeId a) { return unary(OpKind::Square, a, nodes_.at(a).shape); }
NodeId Tape::sum(NodeId a) { return unary(OpKind::Sum, a, {}); }
NodeId Tape::mean(NodeId a) { return unary(OpKind::Mean, a, {}); }

void Tape::output(const std::string& name, NodeId id) {
  check_id(id);
  outputs_[name] = id;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

std::vector<double> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
  std::vector<double> mask(n, 1.0);
  if (rate == 0.0) return mask;
  CounterRng rng(seed, Stream::StudentDropout);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

void row_softmax(std::span<const double> x, std::span<double> y, std::size_t cols) {
  for (std::size_t r = 0; r * cols < x.size(); ++r) {
    const auto row = x.subspan(r * cols, cols);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[r * cols + c] = std::exp(row[c] - top);
      total += y[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] /= total;
  }
}

void row_log_softmax(std::span<const double> x, std::span<double> y, std::size_t cols) {
  for (std::size_t r = 0; r * cols < x.size(); ++r) {
    const auto row = x.subspan(r * cols, cols);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - top);
    const double lse = top + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = row[c] - lse;
  }
}

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
    }
  }
}

}  // namespace

const Tensor& Evaluation::output(const std::string& name) const {
  const auto it = tape_->outputs().find(name);
  if (it == tape_->outputs().end()) throw BindingError("unknown output '" + name + "'");
  return values_[it->second];
}

Bindings Evaluation::outputs() const {
  Bindings out;
  for (const auto& [name, id] : tape_->outputs()) out.emplace(name, values_[id]);
  return out;
}

Evaluation evaluate(const Tape& tape, const Bindings& inputs) {
  for (const auto& [name, tensor] : inputs) {
    if (!tape.inputs().contains(name)) throw BindingError("tape has no input named '" + name + "'");
  }

  Evaluation ev;
  ev.tape_ = &tape;
  const auto& nodes = tape.nodes();
  ev.values_.reserve(nodes.size());
  ev.masks_.resize(nodes.size());

  for (NodeId id = 0; id < nodes.size(); ++id) {
    const Node& node = nodes[id];
    if (node.op == OpKind::Input) {
      const auto it = inputs.find(node.name);
      if (it == inputs.end()) throw BindingError("input '" + node.name + "' is not bound");
      if (it->second.shape() != node.shape) {
        throw ShapeError(fmt::format("input '{}' expects shape {}, got {}", node.name,
                                     shape_string(node.shape), shape_string(it->second.shape())));
      }
      ev.values_.push_back(it->second);
      continue;
    }
    if (node.op == OpKind::Constant) {
      ev.values_.push_back(tape.constant_value(id));
      continue;
    }

    const Tensor& a = ev.values_[node.lhs];
    const auto av = a.values();
    std::vector<double> out(element_count(node.shape), 0.0);
    switch (node.op) {
      case OpKind::MatMul: {
        const Tensor& b = ev.values_[node.rhs];
        gemm_nn(av, b.values(), out, a.shape()[0], a.shape()[1], b.shape()[1]);
        break;
      }
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul: {
        const auto bv = ev.values_[node.rhs].values();
        for (std::size_t i = 0; i < out.size(); ++i) {
          out[i] = node.op == OpKind::Add   ? av[i] + bv[i]
                   : node.op == OpKind::Sub ? av[i] - bv[i]
                                            : av[i] * bv[i];
        }
        break;
      }
      case OpKind::AddRow: {
        const auto bv = ev.values_[node.rhs].values();
        const std::size_t cols = bv.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % cols];
        break;
      }
      case OpKind::Scale:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = node.scalar * av[i];
        break;
      case OpKind::Relu:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
        break;
      case OpKind::Softplus:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(av[i]);
        break;
      case OpKind::Dropout: {
        auto& mask = ev.masks_[id];
        mask = dropout_mask(out.size(), node.scalar, node.seed);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
        break;
      }
      case OpKind::Softmax:
        row_softmax(av, out, matrix_cols(node.shape));
        break;
      case OpKind::LogSoftmax:
        row_log_softmax(av, out, matrix_cols(node.shape));
        break;
      case OpKind::Log:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
        break;
      case OpKind::Square:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
        break;
      case OpKind::Sum:
      case OpKind::Mean: {
        double total = 0.0;
        for (double v : av) total += v;
        out[0] = node.op == OpKind::Sum ? total : total / static_cast<double>(av.size());
        break;
      }
      case OpKind::Input:
      case OpKind::Constant:
        break;
    }
    if (!all_finite(out)) throw NonFiniteError("non-finite value produced by " + tape.describe(id));
    ev.values_.emplace_back(node.shape, std::move(out));
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Reverse pass

Bindings backward(const Evaluation& ev, const Bindings& seeds) {
  const Tape& tape = *ev.tape_;
  const auto& nodes = tape.nodes();
  std::vector<std::vector<double>> grad(nodes.size());

  auto accumulate = [&](NodeId id, std::size_t i, double v) {
    auto& g = grad[id];
    if (g.empty()) g.assign(element_count(nodes[id].shape), 0.0);
    g[i] += v;
  };

  for (const auto& [name, seed] : seeds) {
    const auto it = tape.outputs().find(name);
    if (it == tape.outputs().end()) throw BindingError("seed given for unknown output '" + name + "'");
    const Node& out = nodes[it->second];
    if (seed.shape() != out.shape) {
      throw ShapeError(fmt::format("seed for '{}' has shape {}, output has {}", name,
                                   shape_string(seed.shape()), shape_string(out.shape)));
    }
    for (std::size_t i = 0; i < seed.size(); ++i) accumulate(it->second, i, seed[i]);
  }

  for (NodeId id = nodes.size(); id-- > 0;) {
    const Node& node = nodes[id];
    if (grad[id].empty() || !node.requires_grad) continue;
    if (node.op == OpKind::Input || node.op == OpKind::Constant) continue;

    const std::vector<double>& g = grad[id];
    const auto av = ev.values_[node.lhs].values();
    const auto yv = ev.values_[id].values();
    const bool lhs_grad = nodes[node.lhs].requires_grad;
    const bool rhs_grad = nodes[node.rhs].requires_grad;

    switch (node.op) {
      case OpKind::MatMul: {
        const Tensor& b = ev.values_[node.rhs];
        const std::size_t m = node.shape[0], n = node.shape[1], k = b.shape()[0];
        const auto bv = b.values();
        if (lhs_grad) {
          auto& ga = grad[node.lhs];
          if (ga.empty()) ga.assign(m * k, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (rhs_grad) {
          auto& gb = grad[node.rhs];
          if (gb.empty()) gb.assign(k * n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
        break;
      }
      case OpKind::Add:
      case OpKind::Sub:
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (lhs_grad) accumulate(node.lhs, i, g[i]);
          if (rhs_grad) accumulate(node.rhs, i, node.op == OpKind::Add ? g[i] : -g[i]);
        }
        break;
      case OpKind::Mul: {
        const auto bv = ev.values_[node.rhs].values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (lhs_grad) accumulate(node.lhs, i, g[i] * bv[i]);
          if (rhs_grad) accumulate(node.rhs, i, g[i] * av[i]);
        }
        break;
      }
      case OpKind::AddRow: {
        const std::size_t cols = ev.values_[node.rhs].size();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (lhs_grad) accumulate(node.lhs, i, g[i]);
          if (rhs_grad) accumulate(node.rhs, i % cols, g[i]);
        }
        break;
      }
      case OpKind::Scale:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, node.scalar * g[i]);
        break;
      case OpKind::Relu:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, av[i] > 0.0 ? g[i] : 0.0);
        break;
      case OpKind::Softplus:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, g[i] * sigmoid(av[i]));
        break;
      case OpKind::Dropout: {
        const auto& mask = ev.masks_[id];
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, g[i] * mask[i]);
        break;
      }
      case OpKind::Softmax: {
        const std::size_t cols = matrix_cols(node.shape);
        for (std::size_t r = 0; r * cols < g.size(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * yv[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            accumulate(node.lhs, i, yv[i] * (g[i] - dot));
          }
        }
        break;
      }
      case OpKind::LogSoftmax: {
        const std::size_t cols = matrix_cols(node.shape);
        for (std::size_t r = 0; r * cols < g.size(); ++r) {
          double total = 0.0;
          for (std::size_t c = 0; c < cols; ++c) total += g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            accumulate(node.lhs, i, g[i] - std::exp(yv[i]) * total);
          }
        }
        break;
      }
      case OpKind::Log:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, g[i] / av[i]);
        break;
      case OpKind::Square:
        for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.lhs, i, 2.0 * av[i] * g[i]);
        break;
      case OpKind::Sum:
      case OpKind::Mean: {
        const double scale = node.op == OpKind::Sum ? 1.0 : 1.0 / static_cast<double>(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) accumulate(node.lhs, i, g[0] * scale);
        break;
      }
      case OpKind::Input:
      case OpKind::Constant:
        break;
    }
  }

  Bindings result;
  for (const auto& [name, id] : tape.inputs()) {
    const Node& node = nodes[id];
    if (!node.requires_grad) continue;
    std::vector<double> g = grad[id];
    if (g.empty()) g.assign(element_count(node.shape), 0.0);
    if (!all_finite(g)) throw NonFiniteError("non-finite gradient for input '" + name + "'");
    result.emplace(name, Tensor(node.shape, std::move(g)));
  }
  return result;
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> w, double h) {
  if (!(h > 0.0)) throw Error("invalid_argument", "finite-difference step must be positive");
  std::vector<double> probe(w.begin(), w.end());
  std::vector<double> grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    probe[i] = w[i] + h;
    const double up = f(probe);
    probe[i] = w[i] - h;
    const double down = f(probe);
    probe[i] = w[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError(fmt::format("objective is non-finite at probe coordinate {}", i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace fswa::ad
