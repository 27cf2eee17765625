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

// Loss-geometry analyses: rays through weight space, prediction diversity,
// ensembling and averaging gains, gradient statistics, Jacobian and Hessian
// trace estimators, and the Gaussian-iterate model of weight averaging.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fswa/consistency.hpp"
#include "fswa/data.hpp"
#include "fswa/nets.hpp"
#include "fswa/rng.hpp"
#include "fswa/tensor.hpp"

namespace fswa {

// ---------------------------------------------------------------------------
// Rays

enum class RayKind { SgdSgd, Random, Adversarial };
enum class DataSelector { Train, Test };

struct RaySpec {
  ParamVector origin;
  RayKind kind = RayKind::SgdSgd;
  ParamVector endpoint;                     // SgdSgd: the t = 1 end of the ray
  std::uint64_t seed = 0;                   // Random: direction seed
  std::size_t random_directions = 5;        // Random: directions averaged per grid point
  DataSelector adversarial_split = DataSelector::Train;
  std::vector<double> grid;                 // t for SgdSgd, distance s otherwise
};

struct RayPoint {
  double position = 0.0;  // t or s
  double distance = 0.0;  // Euclidean distance from the origin
  double train_err = 0.0;
  double test_err = 0.0;
};

struct RayProfile {
  std::vector<RayPoint> points;
};

/// Uniform direction on the unit sphere in R^dim.
ParamVector random_unit_direction(std::size_t dim, CounterRng& rng);

/// Gradient of the mean cross-entropy over a labeled set.
ParamVector cross_entropy_gradient(const ParamVector& w, const MlpSpec& spec, const LabeledSet& data);

/// Normalized full-batch cross-entropy gradient: the direction of fastest
/// ascent of the loss on `data`.
ParamVector adversarial_direction(const ParamVector& w, const MlpSpec& spec, const LabeledSet& data);

/// Train (labeled) and test error along the ray; evaluation is deterministic
/// (no perturbations).
RayProfile ray_profile(const RaySpec& ray, const MlpSpec& spec, const LabeledSet& train, const LabeledSet& test);

// ---------------------------------------------------------------------------
// Diversity and gains

/// Fraction of rows whose predicted labels differ.
double diversity(const Predictions& p, const Predictions& q);

/// Predictions of the probability-averaged ensemble.
Predictions ensemble(const Predictions& p, const Predictions& q);

/// 0.5 Err(p) + 0.5 Err(q) - Err(ensemble(p, q)).
double ensemble_gain(const Predictions& p, const Predictions& q, std::span<const std::size_t> truth);
double ensemble_gain(const ParamVector& w1, const ParamVector& w2, const MlpSpec& spec, const LabeledSet& eval);

using ErrorFunction = std::function<double(const ParamVector&)>;

/// 0.5 Err(w1) + 0.5 Err(w2) - Err(0.5 w1 + 0.5 w2) for any error functional.
double average_gain(const ParamVector& w1, const ParamVector& w2, const ErrorFunction& err);
double average_gain(const ParamVector& w1, const ParamVector& w2, const MlpSpec& spec, const LabeledSet& eval);

// ---------------------------------------------------------------------------
// Gradient statistics

struct GradNorms {
  double ce = 0.0;
  double cons = 0.0;  // norm of lambda * grad L_cons
};

GradNorms grad_norms(const ParamVector& w, const ParamVector& teacher_weights, const LabeledBatch& labeled,
                     const std::optional<ad::Tensor>& unlabeled, const LossContext& ctx, double epoch_pos,
                     const StepSeeds& seeds);

/// Unbiased trace of the sample covariance: sum ||g_i - mean||^2 / (B - 1).
double grad_cov_trace(std::span<const ParamVector> gradients);

/// Same, over the cross-entropy gradients of a sequence of minibatches.
double grad_cov_trace(const ParamVector& w, const MlpSpec& spec, std::span<const LabeledSet> minibatches);

// ---------------------------------------------------------------------------
// Jacobian norms

enum class JacobianWrt { Input, Weights };

/// Mean over the rows of `inputs` of ||J||_F^2, where J is the Jacobian of
/// the network head (probabilities by default) with respect to the input or
/// the weights. With a projection P (input mode only) returns ||J P||_F^2.
double exact_jacobian_frobenius(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs, JacobianWrt wrt,
                                Head head = Head::Probabilities,
                                const std::optional<ad::Tensor>& projection = std::nullopt);

struct TraceOptions {
  double epsilon = 1e-4;
  std::size_t probes_per_point = 1;
  std::optional<ad::Tensor> projection;
  Head head = Head::Probabilities;
  std::uint64_t seed = 0;
};

struct TraceEstimate {
  double q_hat = 0.0;
  std::size_t probes_per_point = 0;
  std::size_t points = 0;
  double std_error = 0.0;
  double epsilon = 0.0;
};

/// Q = (1/m) sum_i (1/n) sum_k ||f(x_i + eps z_ik) - f(x_i)||^2 / eps^2 with
/// z ~ N(0, I) or P N(0, I). The teacher side sees the clean input.
///
/// std_error is the sample standard deviation of the per-point means over
/// sqrt(m) when m >= 2, else the probe standard deviation over sqrt(n).
TraceEstimate jacobian_trace_estimate(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs,
                                      const TraceOptions& options);

/// A discrete distribution over symmetric d x d matrices, standing in for
/// x -> A(x).
struct MatrixField {
  std::vector<ad::Tensor> matrices;
  std::vector<double> probabilities;  // empty means uniform
};

struct VarianceReport {
  double empirical_mean = 0.0;
  double expected_mean = 0.0;
  double empirical_variance = 0.0;
  double closed_form_variance = 0.0;
  double ratio = 0.0;  // empirical / closed form
  std::size_t trials = 0;
};

/// Closed form (1/m)(Var[tr A] + (2/n) E[tr A^2]) for the n-probe, m-point
/// Gaussian trace estimator.
double trace_estimator_variance(const MatrixField& field, std::size_t probes, std::size_t points);

/// Monte-Carlo variance of the estimator over `trials` independent draws
/// compared with the closed form.
VarianceReport estimator_variance_check(const MatrixField& field, std::size_t probes, std::size_t points,
                                        std::size_t trials, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Hessian of the squared-error loss

struct HessianDecomp {
  double tr_h = 0.0;             // trace of the Hessian of ||f(x; w) - y||^2
  double gn_term = 0.0;          // 2 ||J_w||_F^2
  double residual = 0.0;         // 2 sum_i tr(d^2 f_i) (f_i - y_i), per-output finite differences
  double implied_residual = 0.0; // tr_h - gn_term
  double jw_frobenius = 0.0;     // ||J_w||_F^2
};

/// Trace of the Hessian of a function given its gradient, by central
/// differences of the gradient along each coordinate.
double hessian_trace_fd(const std::function<ParamVector(const ParamVector&)>& gradient, const ParamVector& w,
                        double h = 1e-5);

/// Decomposes tr H for the loss ||f(x; w) - y||^2 at a single example into
/// the Gauss-Newton part and the label-dependent part. Requires a smooth
/// (softplus) network.
HessianDecomp hessian_trace_decomposition(const ParamVector& w, const MlpSpec& spec, std::span<const double> x,
                                          std::span<const double> y, Head head = Head::Probabilities,
                                          double h = 1e-5);

struct SharpnessCheck {
  double lhs = 0.0;  // Monte-Carlo E_d[R(w + s d)] - R(w)
  double rhs = 0.0;  // s^2 / (2p) tr H
  double lhs_std_error = 0.0;
};

/// Compares the random-ray risk increase with its second-order prediction.
/// Directions are drawn in antithetic pairs (d, -d) so odd-order terms
/// cancel exactly within each pair.
SharpnessCheck ray_sharpness_expansion_check(const ad::ScalarFunction& risk, const ParamVector& w, double trace_h,
                                             double s, std::size_t directions, std::uint64_t seed);

/// Squared-error risk mean_j ||f(x_j; w) - y_j||^2 of an MLP on a regression
/// set (targets are rows of `targets`).
double mse_risk(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs, const ad::Tensor& targets,
                Head head = Head::Probabilities);

ParamVector mse_risk_gradient(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs,
                              const ad::Tensor& targets, Head head = Head::Probabilities);

// ---------------------------------------------------------------------------
// Gaussian model of SGD iterates

struct IterateSimSpec {
  std::size_t n = 10;   // low learning-rate samples
  std::size_t m = 30;   // high learning-rate samples
  double eta1 = 1.0;
  double eta2 = 4.0;
  std::vector<double> sigma_diag = std::vector<double>(10, 1.0);
  std::vector<double> w0 = std::vector<double>(10, 0.0);
  std::size_t trials = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterateSimRow {
  std::size_t m = 0;
  double mse_swa = 0.0;
  double se_swa = 0.0;
  double theory_swa = 0.0;
  double mse_fswa = 0.0;
  double se_fswa = 0.0;
  double theory_fswa = 0.0;
  double diff = 0.0;     // mse_fswa - mse_swa, paired over trials
  double se_diff = 0.0;
};

/// Theory: E||w_swa - w0||^2 = eta1/n tr S and
/// E||w_fswa - w0||^2 = (n eta1 + m eta2)/(n + m)^2 tr S.
double swa_mse_theory(const IterateSimSpec& spec);
double fast_swa_mse_theory(const IterateSimSpec& spec, std::size_t m);
/// Number of high learning-rate points beyond which including them lowers
/// the MSE: n (eta2/eta1 - 2).
double fast_swa_threshold(const IterateSimSpec& spec);

IterateSimRow gaussian_iterate_mse_sim(const IterateSimSpec& spec);

struct CrossoverReport {
  double threshold = 0.0;
  std::vector<IterateSimRow> rows;
  /// First grid m with empirically lower fast-SWA MSE, if any.
  std::optional<std::size_t> empirical_crossover;
  /// Every grid m below the threshold is significantly worse and every one
  /// above significantly better (3 standard errors of the paired difference).
  bool bracketed = false;
};

/// Runs the simulation for every m in `ms` with common random numbers.
CrossoverReport crossover_scan(const IterateSimSpec& spec, std::span<const std::size_t> ms);

}  // namespace fswa
