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

// Dense f64 tensors and a tape-based reverse-mode differentiation engine.
//
// A Tape is a static description of a computation: leaves (named inputs and
// constants) followed by primitive operations in topological order. Shapes
// are checked while the tape is built. `evaluate` runs the tape on a set of
// bound inputs and returns an Evaluation holding every intermediate value;
// `backward` consumes that Evaluation plus cotangent seeds for named outputs
// and returns gradients for every input declared with requires_grad.
//
// There is no implicit broadcasting. The only broadcast is `add_row`, which
// adds a length-n vector to every row of an m x n matrix (bias addition).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fswa/error.hpp"

namespace fswa::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& message) : Error("non_finite", message) {}
};

class BindingError : public Error {
 public:
  explicit BindingError(const std::string& message) : Error("binding", message) {}
};

/// Row-major dense tensor of finite doubles. An empty shape denotes a scalar.
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

using NodeId = std::size_t;
using Bindings = std::map<std::string, Tensor>;

enum class OpKind {
  Input,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  Scale,
  Relu,
  Softplus,
  Dropout,
  Softmax,
  LogSoftmax,
  Log,
  Square,
  Sum,
  Mean,
};

const char* op_name(OpKind op) noexcept;

struct Node {
  OpKind op;
  NodeId lhs = 0;
  NodeId rhs = 0;
  Shape shape;
  double scalar = 0.0;      // Scale factor or dropout rate.
  std::uint64_t seed = 0;   // Dropout mask seed; constant slot for Constant.
  std::string name;
  bool requires_grad = false;
};

class Tape {
 public:
  NodeId input(const std::string& name, Shape shape, bool requires_grad = false);
  NodeId constant(Tensor value, const std::string& name = {});

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_row(NodeId matrix, NodeId row);
  NodeId scale(NodeId a, double factor);
  NodeId relu(NodeId a);
  NodeId softplus(NodeId a);
  /// Inverted dropout: each element is kept with probability 1 - rate and
  /// rescaled by 1 / (1 - rate). The mask is a pure function of `seed`.
  NodeId dropout(NodeId a, double rate, std::uint64_t seed);
  NodeId softmax(NodeId a);
  NodeId log_softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  void output(const std::string& name, NodeId id);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::map<std::string, NodeId>& inputs() const noexcept { return inputs_; }
  const std::map<std::string, NodeId>& outputs() const noexcept { return outputs_; }
  const Tensor& constant_value(NodeId id) const;

  /// Human-readable node label used in error messages.
  std::string describe(NodeId id) const;

 private:
  NodeId push(Node node);
  void check_id(NodeId id) const;
  NodeId unary(OpKind op, NodeId a, Shape shape);
  NodeId elementwise(OpKind op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  std::vector<Tensor> constants_;
  std::map<std::string, NodeId> inputs_;
  std::map<std::string, NodeId> outputs_;
};

/// Per-call evaluation state. Holds every node value so that `backward` can
/// run without recomputation. The tape must outlive the evaluation.
class Evaluation {
 public:
  const Tensor& value(NodeId id) const { return values_.at(id); }
  const Tensor& output(const std::string& name) const;
  Bindings outputs() const;
  const Tape& tape() const noexcept { return *tape_; }

 private:
  friend Evaluation evaluate(const Tape&, const Bindings&);
  friend Bindings backward(const Evaluation&, const Bindings&);

  const Tape* tape_ = nullptr;
  std::vector<Tensor> values_;
  std::vector<std::vector<double>> masks_;
};

/// Runs the tape forward. Every tape input must be bound with a tensor of
/// the declared shape; a non-finite intermediate raises NonFiniteError
/// naming the node that produced it.
Evaluation evaluate(const Tape& tape, const Bindings& inputs);

/// Reverse pass. `seeds` maps output names to cotangents of the output's
/// shape. Returns one gradient per requires_grad input (zeros when the
/// output does not depend on it). Linear in the seeds.
Bindings backward(const Evaluation& evaluation, const Bindings& seeds);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central finite differences (f(w + h e_i) - f(w - h e_i)) / 2h.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> w,
                                         double h);

}  // namespace fswa::ad
