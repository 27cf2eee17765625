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

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fswa/geometry.hpp"
#include "support.hpp"

using namespace fswa;

namespace {

ParamVector random_params(std::size_t n, CounterRng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return ParamVector(std::move(v));
}

LabeledSet random_set(std::size_t rows, std::size_t dim, std::size_t classes, CounterRng& rng) {
  LabeledSet s{testing::random_matrix(rows, dim, rng), {}};
  for (std::size_t r = 0; r < rows; ++r) s.y.push_back(rng.below(classes));
  return s;
}

Predictions preds(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Predictions::from_probabilities(ad::Tensor::matrix(rows, cols, std::move(v)));
}

double err(const ParamVector& w, const MlpSpec& spec, const LabeledSet& s) {
  return error_rate(forward(w, spec, s.x), s.y);
}

double ce(const ParamVector& w, const MlpSpec& spec, const LabeledSet& s) {
  return cross_entropy(forward(w, spec, s.x), s.y);
}

// Finite-difference Jacobian oracle on the plain-loop forward pass: mean over
// rows of the squared Frobenius norm with respect to input or weights.
double fd_jacobian_frobenius(const MlpSpec& spec, const ParamVector& w, const ad::Tensor& inputs, bool wrt_input,
                             bool probabilities) {
  const double h = 1e-6;
  const auto rows = testing::rows_of(inputs);
  auto head = [&](std::span<const double> wv, const std::vector<double>& x) {
    auto z = testing::naive_forward(spec, wv, {x}).logits.front();
    return probabilities ? testing::naive_softmax(z) : z;
  };
  std::vector<double> wv(w.values().begin(), w.values().end());
  double total = 0.0;
  for (const auto& x : rows) {
    std::vector<double> xv = x;
    std::vector<double>& v = wrt_input ? xv : wv;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const auto up = head(wv, xv);
      v[i] = keep - h;
      const auto down = head(wv, xv);
      v[i] = keep;
      for (std::size_t k = 0; k < up.size(); ++k) total += std::pow((up[k] - down[k]) / (2 * h), 2);
    }
  }
  return total / static_cast<double>(rows.size());
}

// Linear map f(x) = W x + b as a network without hidden layers.
struct Linear {
  MlpSpec spec;
  ParamVector w;
  double frobenius = 0.0;
};

Linear random_linear(std::size_t in, std::size_t out, CounterRng& rng) {
  Linear l{MlpSpec{.layer_widths = {in, out}}, {}, 0.0};
  l.w = random_params(l.spec.param_count(), rng);
  for (const auto& s : layer_layout(l.spec))
    for (std::size_t i = 0; i < s.fan_in * s.fan_out; ++i) l.frobenius += l.w[s.weight_offset + i] * l.w[s.weight_offset + i];
  return l;
}

}  // namespace

TEST_CASE("ray profiles") {
  const MlpSpec spec{.layer_widths = {2, 8, 3}};
  CounterRng rng(41, Stream::Test);
  const ParamVector wa = random_params(spec.param_count(), rng);
  const ParamVector wb = random_params(spec.param_count(), rng);
  const LabeledSet train = random_set(30, 2, 3, rng), test = random_set(40, 2, 3, rng);

  SUBCASE("grid at zero reproduces the origin") {
    for (auto kind : {RayKind::SgdSgd, RayKind::Random, RayKind::Adversarial}) {
      const auto p = ray_profile({.origin = wa, .kind = kind, .endpoint = wb, .grid = {0.0}}, spec, train, test);
      REQUIRE(p.points.size() == 1);
      CHECK(p.points[0].train_err == err(wa, spec, train));
      CHECK(p.points[0].test_err == err(wa, spec, test));
      CHECK(p.points[0].distance == 0.0);
    }
  }
  SUBCASE("segment endpoints and distances") {
    const auto p = ray_profile({.origin = wa, .endpoint = wb, .grid = {0.0, 0.5, 1.0, -0.5}}, spec, train, test);
    CHECK(p.points[2].train_err == err(wb, spec, train));
    CHECK(p.points[2].test_err == err(wb, spec, test));
    CHECK(p.points[2].distance == doctest::Approx(distance(wa, wb)).epsilon(1e-12));
    CHECK(p.points[3].distance == doctest::Approx(0.5 * distance(wa, wb)).epsilon(1e-12));
  }
  SUBCASE("degenerate segment is flat") {
    const auto p = ray_profile({.origin = wa, .endpoint = wa, .grid = {-1.0, 0.0, 0.3, 2.0}}, spec, train, test);
    for (const auto& pt : p.points) {
      CHECK(pt.train_err == p.points[0].train_err);
      CHECK(pt.test_err == p.points[0].test_err);
    }
  }
  SUBCASE("empty grid") {
    CHECK_THROWS_AS(ray_profile({.origin = wa, .endpoint = wb}, spec, train, test), Error);
  }
  SUBCASE("random ray distances equal s") {
    const auto p = ray_profile({.origin = wa, .kind = RayKind::Random, .seed = 3, .grid = {0.0, 1.0, 4.0}}, spec, train, test);
    CHECK(p.points[2].distance == doctest::Approx(4.0).epsilon(1e-12));
    for (const auto& pt : p.points) {
      CHECK(pt.train_err >= 0.0);
      CHECK(pt.train_err <= 1.0);
    }
  }
}

TEST_CASE("directions are unit vectors") {
  CounterRng rng(42, Stream::Test);
  for (std::size_t dim : {1u, 7u, 500u}) CHECK(std::abs(norm(random_unit_direction(dim, rng)) - 1.0) < 1e-12);
  const MlpSpec spec{.layer_widths = {2, 6, 2}, .hidden_activation = Activation::Softplus};
  for (int trial = 0; trial < 10; ++trial) {
    const ParamVector w = random_params(spec.param_count(), rng);
    const LabeledSet data = random_set(20, 2, 2, rng);
    const ParamVector d = adversarial_direction(w, spec, data);
    CHECK(std::abs(norm(d) - 1.0) < 1e-12);
    // directional derivative of the loss along d equals the gradient norm
    const double h = 1e-6;
    const double fd = (ce(step_along(w, d, h), spec, data) - ce(step_along(w, d, -h), spec, data)) / (2 * h);
    CHECK(fd > 0.0);
    CHECK(fd == doctest::Approx(norm(cross_entropy_gradient(w, spec, data))).epsilon(1e-6));
    const double one_sided = (ce(step_along(w, d, h), spec, data) - ce(w, spec, data)) / h;
    CHECK(one_sided > 0.0);
  }
}

TEST_CASE("diversity") {
  const auto a = preds(3, 2, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4});
  const auto b = preds(3, 2, {0.1, 0.9, 0.7, 0.3, 0.3, 0.7});
  CHECK(diversity(a, a) == 0.0);
  CHECK(diversity(a, b) == 1.0);
  CHECK_THROWS_AS(diversity(a, preds(1, 2, {0.5, 0.5})), Error);

  CounterRng rng(43, Stream::Test);
  auto random_preds = [&] {
    std::vector<double> v;
    for (int r = 0; r < 50; ++r) {
      const double u = rng.uniform();
      const double w = rng.uniform() * (1 - u);
      v.insert(v.end(), {u, w, 1 - u - w});
    }
    return preds(50, 3, v);
  };
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_preds(), q = random_preds(), r = random_preds();
    CHECK(diversity(p, q) == diversity(q, p));
    CHECK(diversity(p, r) <= diversity(p, q) + diversity(q, r) + 1e-15);
    CHECK(diversity(p, q) >= 0.0);
    CHECK(diversity(p, q) <= 1.0);
  }
}

TEST_CASE("ensemble gain on a crafted pair") {
  // each model misses a different point; the average gets both right
  const auto p = preds(2, 2, {0.4, 0.6, 0.1, 0.9});
  const auto q = preds(2, 2, {0.9, 0.1, 0.6, 0.4});
  const std::vector<std::size_t> truth{0, 1};
  CHECK(error_rate(p, truth) == 0.5);
  CHECK(error_rate(q, truth) == 0.5);
  CHECK(error_rate(ensemble(p, q), truth) == 0.0);
  // one misclassified point recovered out of two
  CHECK(ensemble_gain(p, q, truth) * 2.0 == 1.0);
  CHECK(ensemble_gain(p, p, truth) == 0.0);
}

TEST_CASE("gains vanish for identical weights") {
  const MlpSpec spec{.layer_widths = {2, 8, 3}};
  CounterRng rng(44, Stream::Test);
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector w = random_params(spec.param_count(), rng);
    const LabeledSet data = random_set(30, 2, 3, rng);
    CHECK(ensemble_gain(w, w, spec, data) == 0.0);
    CHECK(average_gain(w, w, spec, data) == 0.0);
  }
}

TEST_CASE("averaging gain is nonnegative for a convex loss") {
  CounterRng rng(45, Stream::Test);
  const auto x = testing::random_matrix(20, 4, rng);
  std::vector<double> y(20);
  for (double& v : y) v = rng.normal();
  const ErrorFunction mse = [&](const ParamVector& w) {
    double s = 0.0;
    for (std::size_t r = 0; r < 20; ++r) {
      double f = 0.0;
      for (std::size_t c = 0; c < 4; ++c) f += x.at(r, c) * w[c];
      s += (f - y[r]) * (f - y[r]);
    }
    return s / 20.0;
  };
  for (int trial = 0; trial < 100; ++trial) {
    CHECK(average_gain(random_params(4, rng, 3.0), random_params(4, rng, 3.0), mse) >= 0.0);
  }
}

TEST_CASE("gradient norms") {
  const MlpSpec spec{.layer_widths = {2, 8, 2}};
  CounterRng rng(46, Stream::Test);
  const ParamVector w = random_params(spec.param_count(), rng);
  const LabeledBatch labeled{testing::random_matrix(6, 2, rng), {0, 1, 0, 1, 1, 0}};
  const std::optional<ad::Tensor> unlabeled = testing::random_matrix(10, 2, rng);

  const ConsistencyConfig self{.teacher_mode = TeacherMode::Self};
  const PerturbationSpec off{.noise_sigma = 0.0};
  const auto g0 = grad_norms(w, w, labeled, unlabeled, {&spec, &self, &off}, 10.0, {});
  CHECK(g0.cons == 0.0);
  CHECK(g0.ce > 0.0);

  const PerturbationSpec noisy{.noise_sigma = 0.5};
  const auto g1 = grad_norms(w, w, labeled, unlabeled, {&spec, &self, &noisy}, 10.0, {3, 4});
  CHECK(std::isfinite(g1.ce));
  CHECK(std::isfinite(g1.cons));
  CHECK(g1.cons > 0.0);
}

TEST_CASE("cross-entropy gradient vanishes at an interpolating minimum") {
  // Two separable points, linear softmax model, long gradient descent.
  const MlpSpec spec{.layer_widths = {2, 2}};
  const LabeledSet data{ad::Tensor::matrix(2, 2, {1.0, 0.5, -1.0, -0.5}), {0, 1}};
  ParamVector w = ParamVector::zeros(spec.param_count());
  for (int it = 0; it < 20000; ++it) w = step_along(w, cross_entropy_gradient(w, spec, data), -1.0);
  CHECK(err(w, spec, data) == 0.0);
  const ConsistencyConfig none{.teacher_mode = TeacherMode::None};
  const PerturbationSpec off{.noise_sigma = 0.0};
  const auto g = grad_norms(w, w, {data.x, data.y}, std::nullopt, {&spec, &none, &off}, 0.0, {});
  CHECK(g.ce < 1e-3);
}

TEST_CASE("gradient covariance trace") {
  CounterRng rng(47, Stream::Test);
  const ParamVector g = random_params(5, rng);
  CHECK_THROWS_AS(grad_cov_trace(std::vector<ParamVector>{g}), Error);
  CHECK(grad_cov_trace(std::vector<ParamVector>{g, g, g}) == 0.0);

  const MlpSpec spec{.layer_widths = {2, 4, 2}};
  const ParamVector w = random_params(spec.param_count(), rng);
  const LabeledSet half = random_set(8, 2, 2, rng);
  const std::vector<LabeledSet> halves{half, half};
  CHECK(grad_cov_trace(w, spec, halves) == 0.0);

  // N(0, sigma^2 I_p) gradients: (B-1) T / sigma^2 is chi-square with p(B-1) dof
  const std::size_t p = 10, b = 1000;
  const double sigma = 0.5;
  std::vector<ParamVector> gs;
  for (std::size_t i = 0; i < b; ++i) gs.push_back(random_params(p, rng, sigma));
  const double expected = static_cast<double>(p) * sigma * sigma;
  const double se = std::sqrt(2.0 * static_cast<double>(p) * std::pow(sigma, 4) / static_cast<double>(b - 1));
  CHECK(std::abs(grad_cov_trace(gs) - expected) < 3 * se);
}

TEST_CASE("exact Jacobian norms") {
  CounterRng rng(48, Stream::Test);
  const auto lin = random_linear(4, 3, rng);
  const auto x = testing::random_matrix(5, 4, rng);
  CHECK(exact_jacobian_frobenius(lin.w, lin.spec, x, JacobianWrt::Input, Head::Logits) ==
        doctest::Approx(lin.frobenius).epsilon(1e-13));
  // weights mode for a linear map: each output sees ||x||^2 + 1
  double expect_w = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double xx = 1.0;
    for (std::size_t c = 0; c < 4; ++c) xx += x.at(r, c) * x.at(r, c);
    expect_w += 3.0 * xx / 5.0;
  }
  CHECK(exact_jacobian_frobenius(lin.w, lin.spec, x, JacobianWrt::Weights, Head::Logits) ==
        doctest::Approx(expect_w).epsilon(1e-13));

  const MlpSpec spec{.layer_widths = {3, 5, 4, 3}, .hidden_activation = Activation::Softplus};
  ParamVector w = random_params(spec.param_count(), rng);
  const auto last = layer_layout(spec).back();
  for (std::size_t i = last.weight_offset; i < last.bias_offset; ++i) w.mutable_values()[i] = 0.0;
  const auto xs = testing::random_matrix(4, 3, rng);
  CHECK(exact_jacobian_frobenius(w, spec, xs, JacobianWrt::Input, Head::Logits) == 0.0);
  CHECK(exact_jacobian_frobenius(w, spec, xs, JacobianWrt::Input) == 0.0);

  for (int trial = 0; trial < 5; ++trial) {
    const ParamVector wr = random_params(spec.param_count(), rng);
    for (bool probs : {true, false}) {
      const Head head = probs ? Head::Probabilities : Head::Logits;
      for (bool input : {true, false}) {
        const double exact = exact_jacobian_frobenius(wr, spec, xs, input ? JacobianWrt::Input : JacobianWrt::Weights, head);
        CHECK(exact == doctest::Approx(fd_jacobian_frobenius(spec, wr, xs, input, probs)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("trace estimator on a linear map converges to the weight norm") {
  CounterRng rng(49, Stream::Test);
  const auto lin = random_linear(4, 3, rng);
  const auto x = testing::random_matrix(1000, 4, rng);
  const auto est = jacobian_trace_estimate(lin.w, lin.spec, x, {.probes_per_point = 100, .head = Head::Logits, .seed = 5});
  CHECK(est.points == 1000);
  CHECK(est.probes_per_point == 100);
  CHECK(est.std_error >= 0.0);
  CHECK(std::abs(est.q_hat / lin.frobenius - 1.0) < 0.01);

  // projection onto the first two input coordinates keeps two rows of W
  std::vector<double> pv(16, 0.0);
  pv[0] = pv[5] = 1.0;
  double partial = 0.0;
  const auto s = layer_layout(lin.spec).front();
  for (std::size_t i = 0; i < 2 * s.fan_out; ++i) partial += lin.w[s.weight_offset + i] * lin.w[s.weight_offset + i];
  const TraceOptions proj{.probes_per_point = 100, .projection = ad::Tensor::matrix(4, 4, pv), .head = Head::Logits, .seed = 6};
  CHECK(std::abs(jacobian_trace_estimate(lin.w, lin.spec, x, proj).q_hat / partial - 1.0) < 0.02);
  CHECK(exact_jacobian_frobenius(lin.w, lin.spec, x, JacobianWrt::Input, Head::Logits, ad::Tensor::matrix(4, 4, pv)) ==
        doctest::Approx(partial).epsilon(1e-13));

  CHECK_THROWS_AS(jacobian_trace_estimate(lin.w, lin.spec, x, {.epsilon = 0.0}), Error);
  CHECK_THROWS_AS(jacobian_trace_estimate(lin.w, lin.spec, x, {.epsilon = -1e-3}), Error);
}

TEST_CASE("trace estimator is zero for a constant network") {
  const MlpSpec spec{.layer_widths = {2, 5, 3}};
  CounterRng rng(50, Stream::Test);
  const auto est = jacobian_trace_estimate(ParamVector::zeros(spec.param_count()), spec, testing::random_matrix(10, 2, rng),
                                           {.probes_per_point = 3});
  CHECK(est.q_hat == 0.0);
}

TEST_CASE("trace estimator is unbiased on a small MLP") {
  const MlpSpec spec{.layer_widths = {3, 6, 3}, .hidden_activation = Activation::Softplus};
  CounterRng rng(51, Stream::Test);
  const ParamVector w = random_params(spec.param_count(), rng, 1.5);
  const auto x = testing::random_matrix(8, 3, rng);
  const double exact = exact_jacobian_frobenius(w, spec, x, JacobianWrt::Input);

  const auto single = jacobian_trace_estimate(w, spec, x, {.probes_per_point = 50, .seed = 1});
  CHECK(std::abs(single.q_hat - exact) < 3 * single.std_error);

  std::vector<double> reps;
  for (std::uint64_t r = 0; r < 200; ++r) reps.push_back(jacobian_trace_estimate(w, spec, x, {.probes_per_point = 2, .seed = 100 + r}).q_hat);
  const double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / 200.0;
  double var = 0.0;
  for (double q : reps) var += (q - mean) * (q - mean);
  const double se = std::sqrt(var / 199.0 / 200.0);
  CHECK(std::abs(mean - exact) < 3 * se);

  // finite epsilon bias is second order once the odd term averages out
  auto at = [&](double eps) { return jacobian_trace_estimate(w, spec, x, {.epsilon = eps, .probes_per_point = 20000, .seed = 9}).q_hat; };
  const double limit = at(1e-5);
  const double bias_a = at(0.02) - limit, bias_b = at(0.01) - limit;
  // halving eps cuts the bias by close to four; the odd term's sampling noise
  // pulls the ratio down a little at finite probe counts
  CHECK(bias_a / bias_b > 2.5);
  CHECK(bias_a / bias_b < 5.0);
}

TEST_CASE("estimator variance against the closed form") {
  SUBCASE("identity in three dimensions") {
    const MatrixField field{{ad::Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})}, {}};
    CHECK(trace_estimator_variance(field, 1, 1) == doctest::Approx(6.0).epsilon(1e-14));
    const auto r = estimator_variance_check(field, 1, 1, 10000, 1);
    CHECK(std::abs(r.empirical_variance / 6.0 - 1.0) < 0.1);
    CHECK(r.expected_mean == 3.0);
  }
  SUBCASE("deterministic field with several probes and points") {
    CounterRng rng(52, Stream::Test);
    const auto b = testing::random_matrix(4, 4, rng);
    std::vector<double> a(16);
    double tr_a2 = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) a[i * 4 + j] = 0.5 * (b.at(i, j) + b.at(j, i));
    for (std::size_t i = 0; i < 16; ++i) tr_a2 += a[i] * a[i];
    const MatrixField field{{ad::Tensor::matrix(4, 4, a)}, {}};
    CHECK(trace_estimator_variance(field, 3, 2) == doctest::Approx(2.0 * tr_a2 / 6.0).epsilon(1e-13));
    const auto r = estimator_variance_check(field, 3, 2, 10000, 2);
    CHECK(r.ratio >= 0.9);
    CHECK(r.ratio <= 1.1);
  }
  SUBCASE("many probes leave the spread of tr A") {
    // two points: A = I and A = 3I in d = 2, equally likely -> Var tr A = 4
    const MatrixField field{{ad::Tensor::matrix(2, 2, {1, 0, 0, 1}), ad::Tensor::matrix(2, 2, {3, 0, 0, 3})}, {0.5, 0.5}};
    const double closed = trace_estimator_variance(field, 1000, 1);
    CHECK(closed == doctest::Approx(4.0 + 2.0 / 1000.0 * 10.0).epsilon(1e-13));
    const auto r = estimator_variance_check(field, 1000, 1, 4000, 3);
    CHECK(std::abs(r.empirical_variance / 4.0 - 1.0) < 0.1);
  }
}

TEST_CASE("Hessian trace by finite differences of a gradient") {
  // quadratic 0.5 w^T A w has gradient A w and trace tr A
  const std::vector<double> a{2, 1, 0, 1, 3, 0.5, 0, 0.5, -1};
  const auto grad = [&](const ParamVector& w) {
    std::vector<double> g(3, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) g[i] += a[i * 3 + j] * w[j];
    return ParamVector(g);
  };
  CHECK(hessian_trace_fd(grad, ParamVector({0.3, -1.0, 2.0})) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("Hessian decomposition") {
  CounterRng rng(53, Stream::Test);
  SUBCASE("relu is rejected") {
    const MlpSpec relu{.layer_widths = {2, 3, 2}};
    const std::vector<double> x{0.1, 0.2}, y{1.0, 0.0};
    CHECK_THROWS_AS(hessian_trace_decomposition(init_mlp(relu, 1), relu, x, y), Error);
  }
  SUBCASE("linear model has no residual") {
    const auto lin = random_linear(3, 2, rng);
    const MlpSpec spec{.layer_widths = {3, 2}, .hidden_activation = Activation::Softplus};
    const std::vector<double> x{0.5, -1.0, 2.0}, y{0.3, 0.1};
    const auto d = hessian_trace_decomposition(lin.w, spec, x, y, Head::Logits);
    const double jw = 2.0 * (1.0 + 0.25 + 1.0 + 4.0);
    CHECK(d.jw_frobenius == doctest::Approx(jw).epsilon(1e-12));
    CHECK(d.tr_h == doctest::Approx(2.0 * jw).epsilon(1e-8));
    CHECK(std::abs(d.residual) < 1e-6);
  }
  SUBCASE("interpolating point kills the residual") {
    const MlpSpec spec{.layer_widths = {2, 5, 3}, .hidden_activation = Activation::Softplus};
    const ParamVector w = random_params(spec.param_count(), rng);
    const std::vector<double> x{0.4, -0.7};
    const auto y = testing::naive_softmax(testing::naive_forward(spec, w.values(), {x}).logits.front());
    const auto d = hessian_trace_decomposition(w, spec, x, y);
    CHECK(std::abs(d.residual) < 1e-6 * std::abs(d.tr_h) + 1e-9);
    CHECK(std::abs(d.tr_h - d.gn_term) < 1e-4 * std::abs(d.tr_h));
  }
  SUBCASE("random softplus nets close against a second-difference oracle") {
    for (int trial = 0; trial < 5; ++trial) {
      const MlpSpec spec{.layer_widths = {2, 6, 3}, .hidden_activation = Activation::Softplus};
      const ParamVector w = random_params(spec.param_count(), rng);
      const std::vector<double> x{rng.normal(), rng.normal()}, y{1.0, 0.0, 0.0};
      const auto d = hessian_trace_decomposition(w, spec, x, y);
      CHECK(std::abs(d.tr_h - d.gn_term - d.residual) < 1e-3 * std::abs(d.tr_h));
      CHECK(d.gn_term == doctest::Approx(2.0 * d.jw_frobenius));

      const auto loss = [&](std::vector<double> v) {
        const auto p = testing::naive_softmax(testing::naive_forward(spec, v, {x}).logits.front());
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += (p[k] - y[k]) * (p[k] - y[k]);
        return s;
      };
      std::vector<double> v(w.values().begin(), w.values().end());
      const double h = 1e-4, f0 = loss(v);
      double tr = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = loss(v);
        v[i] = keep - h;
        const double down = loss(v);
        v[i] = keep;
        tr += (up - 2 * f0 + down) / (h * h);
      }
      CHECK(std::abs(d.tr_h - tr) < 1e-4 * std::abs(tr) + 1e-6);
    }
  }
}

TEST_CASE("random-ray sharpness expansion") {
  // R(w) = 0.5 w^T A w + b^T w, tr H = tr A
  const std::size_t p = 6;
  CounterRng rng(54, Stream::Test);
  std::vector<double> a(p * p, 0.0), b(p);
  for (std::size_t i = 0; i < p; ++i) a[i * p + i] = 1.0 + static_cast<double>(i);
  a[1] = a[p] = 0.4;
  for (double& v : b) v = rng.normal();
  const ad::ScalarFunction risk = [&](std::span<const double> w) {
    double r = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      r += b[i] * w[i];
      for (std::size_t j = 0; j < p; ++j) r += 0.5 * w[i] * a[i * p + j] * w[j];
    }
    return r;
  };
  const ParamVector w0 = random_params(p, rng);
  const double tr = 21.0;

  const auto zero = ray_sharpness_expansion_check(risk, w0, tr, 0.0, 10, 1);
  CHECK(zero.lhs == 0.0);
  CHECK(zero.rhs == 0.0);

  const auto c = ray_sharpness_expansion_check(risk, w0, tr, 0.1, 10000, 2);
  CHECK(c.lhs / c.rhs >= 0.95);
  CHECK(c.lhs / c.rhs <= 1.05);

  // s^2 scaling on a smooth MLP risk with shared directions
  const MlpSpec spec{.layer_widths = {2, 4, 2}, .hidden_activation = Activation::Softplus};
  const ParamVector w = random_params(spec.param_count(), rng);
  const auto xs = testing::random_matrix(5, 2, rng);
  const auto ys = testing::random_matrix(5, 2, rng);
  const ad::ScalarFunction mlp_risk = [&](std::span<const double> v) {
    return mse_risk(ParamVector({v.begin(), v.end()}), spec, xs, ys);
  };
  const auto big = ray_sharpness_expansion_check(mlp_risk, w, 1.0, 0.02, 2000, 3);
  const auto small = ray_sharpness_expansion_check(mlp_risk, w, 1.0, 0.01, 2000, 3);
  CHECK(big.lhs / small.lhs == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("Gaussian iterate model") {
  IterateSimSpec spec;
  SUBCASE("equal rates always favour more samples") {
    spec.eta2 = spec.eta1;
    for (std::size_t m = 1; m < 100; ++m) CHECK(fast_swa_mse_theory(spec, m) < swa_mse_theory(spec));
    CHECK_THROWS_AS(spec.validate(), Error);
  }
  SUBCASE("crossover at n (eta2/eta1 - 2)") {
    CHECK(fast_swa_threshold(spec) == 20.0);
    const std::size_t ms[] = {10, 30};
    const auto rep = crossover_scan(spec, ms);
    CHECK(rep.bracketed);
    REQUIRE(rep.empirical_crossover.has_value());
    CHECK(*rep.empirical_crossover == 30);
    for (const auto& row : rep.rows) {
      CHECK(std::abs(row.mse_swa - row.theory_swa) < 3 * row.se_swa);
      CHECK(std::abs(row.mse_fswa - row.theory_fswa) < 3 * row.se_fswa);
    }
    CHECK(rep.rows[0].diff > 0.0);
    CHECK(rep.rows[1].diff < 0.0);
  }
  SUBCASE("doubling the covariance doubles both errors") {
    const auto one = gaussian_iterate_mse_sim(spec);
    for (double& s : spec.sigma_diag) s *= 2.0;
    const auto two = gaussian_iterate_mse_sim(spec);
    CHECK(std::abs(two.mse_swa - 2.0 * one.mse_swa) < 3 * std::hypot(two.se_swa, 2.0 * one.se_swa));
    CHECK(std::abs(two.mse_fswa - 2.0 * one.mse_fswa) < 3 * std::hypot(two.se_fswa, 2.0 * one.se_fswa));
  }
  SUBCASE("invalid specs") {
    spec.n = 0;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}
