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

#include "fswa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace fswa {

namespace {

const char* head_output(Head head) { return head == Head::Logits ? "logits" : "probabilities"; }

ad::Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) throw Error("invalid_label", fmt::format("label {} >= class count {}", labels[r], classes));
    v[r * classes + labels[r]] = 1.0;
  }
  return ad::Tensor::matrix(labels.size(), classes, std::move(v));
}

ad::Bindings bindings_for(const MlpSpec& spec, const ParamVector& w, const ad::Tensor& x, bool params_grad,
                          bool input_grad = false) {
  ad::Bindings b = bind_params(spec, w, params_grad);
  b.emplace("x", ad::Tensor(x.shape(), x.data(), input_grad));
  return b;
}

ad::Tensor row_matrix(std::span<const double> values) {
  return ad::Tensor::matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

struct MeanAndError {
  double mean = 0.0;
  double std_error = 0.0;
};

MeanAndError summarize(std::span<const double> values) {
  MeanAndError out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std_error = std::sqrt(ss / (n - 1.0) / n);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rays

ParamVector random_unit_direction(std::size_t dim, CounterRng& rng) {
  std::vector<double> d(dim);
  double total = 0.0;
  do {
    total = 0.0;
    for (double& v : d) {
      v = rng.normal();
      total += v * v;
    }
  } while (total == 0.0);
  const double inv = 1.0 / std::sqrt(total);
  for (double& v : d) v *= inv;
  return ParamVector(std::move(d));
}

ParamVector cross_entropy_gradient(const ParamVector& w, const MlpSpec& spec, const LabeledSet& data) {
  if (data.rows() == 0) throw Error("empty_batch", "cross-entropy gradient needs labeled data");
  MlpGraph g = build_mlp_graph(spec, {.rows = data.rows(), .params_require_grad = true});
  const auto labels = g.tape.constant(one_hot(data.y, spec.num_classes()), "labels");
  const auto ce = g.tape.scale(g.tape.sum(g.tape.mul(labels, g.log_probabilities)),
                               -1.0 / static_cast<double>(data.rows()));
  g.tape.output("ce", ce);
  const auto ev = ad::evaluate(g.tape, bindings_for(spec, w, data.x, true));
  return gather_param_gradient(spec, ad::backward(ev, {{"ce", ad::Tensor::scalar(1.0)}}));
}

ParamVector adversarial_direction(const ParamVector& w, const MlpSpec& spec, const LabeledSet& data) {
  const ParamVector g = cross_entropy_gradient(w, spec, data);
  const double n = norm(g);
  if (n == 0.0) throw Error("degenerate_direction", "cross-entropy gradient is zero; no ascent direction");
  return scale(g, 1.0 / n);
}

RayProfile ray_profile(const RaySpec& ray, const MlpSpec& spec, const LabeledSet& train, const LabeledSet& test) {
  if (ray.grid.empty()) throw Error("empty_grid", "ray profile needs at least one grid point");
  auto errors_at = [&](const ParamVector& w) {
    return std::pair{error_rate(forward(w, spec, train.x), train.y), error_rate(forward(w, spec, test.x), test.y)};
  };

  std::vector<ParamVector> directions;
  double segment = 0.0;
  switch (ray.kind) {
    case RayKind::SgdSgd:
      require_same_length(ray.origin, ray.endpoint, "ray_profile");
      segment = distance(ray.origin, ray.endpoint);
      break;
    case RayKind::Random: {
      if (ray.random_directions == 0) throw Error("empty_grid", "random rays need at least one direction");
      for (std::size_t j = 0; j < ray.random_directions; ++j) {
        CounterRng rng(ray.seed, Stream::Ray, j);
        directions.push_back(random_unit_direction(ray.origin.size(), rng));
      }
      break;
    }
    case RayKind::Adversarial:
      directions.push_back(
          adversarial_direction(ray.origin, spec, ray.adversarial_split == DataSelector::Train ? train : test));
      break;
  }

  RayProfile profile;
  for (double pos : ray.grid) {
    RayPoint point{.position = pos};
    if (ray.kind == RayKind::SgdSgd) {
      point.distance = std::abs(pos) * segment;
      std::tie(point.train_err, point.test_err) = errors_at(interpolate(ray.origin, ray.endpoint, pos));
    } else {
      point.distance = std::abs(pos);
      for (const ParamVector& d : directions) {
        const auto [tr, te] = errors_at(step_along(ray.origin, d, pos));
        point.train_err += tr;
        point.test_err += te;
      }
      point.train_err /= static_cast<double>(directions.size());
      point.test_err /= static_cast<double>(directions.size());
    }
    profile.points.push_back(point);
  }
  return profile;
}

// ---------------------------------------------------------------------------
// Diversity and gains

double diversity(const Predictions& p, const Predictions& q) {
  if (p.rows() != q.rows()) throw LengthMismatch(fmt::format("diversity: {} vs {} rows", p.rows(), q.rows()));
  if (p.rows() == 0) return 0.0;
  std::size_t differ = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) differ += p.labels[i] != q.labels[i] ? 1 : 0;
  return static_cast<double>(differ) / static_cast<double>(p.rows());
}

Predictions ensemble(const Predictions& p, const Predictions& q) {
  if (p.probabilities.shape() != q.probabilities.shape()) throw ad::ShapeError("ensemble: prediction shapes differ");
  std::vector<double> avg(p.probabilities.size());
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * p.probabilities[i] + 0.5 * q.probabilities[i];
  return Predictions::from_probabilities(ad::Tensor(p.probabilities.shape(), std::move(avg)));
}

double ensemble_gain(const Predictions& p, const Predictions& q, std::span<const std::size_t> truth) {
  return 0.5 * error_rate(p, truth) + 0.5 * error_rate(q, truth) - error_rate(ensemble(p, q), truth);
}

double ensemble_gain(const ParamVector& w1, const ParamVector& w2, const MlpSpec& spec, const LabeledSet& eval) {
  return ensemble_gain(forward(w1, spec, eval.x), forward(w2, spec, eval.x), eval.y);
}

double average_gain(const ParamVector& w1, const ParamVector& w2, const ErrorFunction& err) {
  return 0.5 * err(w1) + 0.5 * err(w2) - err(interpolate(w1, w2, 0.5));
}

double average_gain(const ParamVector& w1, const ParamVector& w2, const MlpSpec& spec, const LabeledSet& eval) {
  return average_gain(w1, w2, [&](const ParamVector& w) { return error_rate(forward(w, spec, eval.x), eval.y); });
}

// ---------------------------------------------------------------------------
// Gradient statistics

GradNorms grad_norms(const ParamVector& w, const ParamVector& teacher_weights, const LabeledBatch& labeled,
                     const std::optional<ad::Tensor>& unlabeled, const LossContext& ctx, double epoch_pos,
                     const StepSeeds& seeds) {
  const LossEvaluation loss = total_loss(w, teacher_weights, labeled, unlabeled, ctx, epoch_pos, seeds);
  return {norm(loss.gradients->ce), loss.parts.lambda * norm(loss.gradients->cons)};
}

double grad_cov_trace(std::span<const ParamVector> gradients) {
  if (gradients.size() < 2) throw Error("invalid_argument", "gradient covariance needs at least 2 minibatches");
  const std::size_t p = gradients.front().size();
  // shifted by the first gradient, so identical inputs give exactly zero
  const auto& g0 = gradients.front();
  std::vector<double> mean(p, 0.0);
  for (const auto& g : gradients) {
    if (g.size() != p) throw LengthMismatch("grad_cov_trace: gradient lengths differ");
    for (std::size_t i = 0; i < p; ++i) mean[i] += g[i] - g0[i];
  }
  for (double& v : mean) v /= static_cast<double>(gradients.size());
  double total = 0.0;
  for (const auto& g : gradients)
    for (std::size_t i = 0; i < p; ++i) {
      const double d = (g[i] - g0[i]) - mean[i];
      total += d * d;
    }
  return total / static_cast<double>(gradients.size() - 1);
}

double grad_cov_trace(const ParamVector& w, const MlpSpec& spec, std::span<const LabeledSet> minibatches) {
  std::vector<ParamVector> grads;
  for (const auto& batch : minibatches) grads.push_back(cross_entropy_gradient(w, spec, batch));
  return grad_cov_trace(grads);
}

// ---------------------------------------------------------------------------
// Jacobian norms

double exact_jacobian_frobenius(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs, JacobianWrt wrt,
                                Head head, const std::optional<ad::Tensor>& projection) {
  const std::size_t rows = inputs.rows();
  const std::size_t classes = spec.num_classes();
  const std::size_t dim = spec.input_dim();
  if (inputs.rank() != 2 || inputs.cols() != dim) throw ad::ShapeError("exact_jacobian_frobenius: input width mismatch");
  if (projection && wrt != JacobianWrt::Input) throw Error("invalid_argument", "projection applies to input Jacobians only");
  const char* out = head_output(head);

  double total = 0.0;
  if (wrt == JacobianWrt::Input) {
    // Rows are independent, so one backward pass per output class yields
    // the k-th Jacobian row for every input point at once.
    const MlpGraph g = build_mlp_graph(spec, {.rows = rows, .input_requires_grad = true});
    const auto ev = ad::evaluate(g.tape, bindings_for(spec, w, inputs, false, true));
    for (std::size_t k = 0; k < classes; ++k) {
      std::vector<double> seed(rows * classes, 0.0);
      for (std::size_t r = 0; r < rows; ++r) seed[r * classes + k] = 1.0;
      const auto grads = ad::backward(ev, {{out, ad::Tensor::matrix(rows, classes, std::move(seed))}});
      const ad::Tensor& gx = grads.at("x");
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < dim; ++i) {
          double v = gx.at(r, i);
          if (projection) {
            v = 0.0;
            for (std::size_t j = 0; j < dim; ++j) v += projection->at(i, j) * gx.at(r, j);
          }
          total += v * v;
        }
      }
    }
  } else {
    const MlpGraph g = build_mlp_graph(spec, {.rows = 1, .params_require_grad = true});
    for (std::size_t r = 0; r < rows; ++r) {
      const auto ev = ad::evaluate(g.tape, bindings_for(spec, w, row_matrix(inputs.values().subspan(r * dim, dim)), true));
      for (std::size_t k = 0; k < classes; ++k) {
        std::vector<double> seed(classes, 0.0);
        seed[k] = 1.0;
        const ParamVector gw = gather_param_gradient(spec, ad::backward(ev, {{out, ad::Tensor::matrix(1, classes, seed)}}));
        total += dot(gw, gw);
      }
    }
  }
  return total / static_cast<double>(rows);
}

TraceEstimate jacobian_trace_estimate(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs,
                                      const TraceOptions& options) {
  if (!(options.epsilon > 0.0)) throw Error("invalid_argument", "epsilon must be positive");
  if (options.probes_per_point == 0) throw Error("invalid_argument", "need at least one probe per point");
  const std::size_t dim = spec.input_dim();
  if (inputs.rank() != 2 || inputs.cols() != dim) throw ad::ShapeError("jacobian_trace_estimate: input width mismatch");
  if (options.projection) {
    PerturbationSpec check;
    check.projection = options.projection;
    check.validate(dim);
  }
  const std::size_t m = inputs.rows();
  const std::size_t n = options.probes_per_point;
  const std::size_t classes = spec.num_classes();
  const char* out = head_output(options.head);
  const double eps = options.epsilon;

  const MlpGraph clean_graph = build_mlp_graph(spec, {.rows = m});
  const ad::Tensor clean = ad::evaluate(clean_graph.tape, bindings_for(spec, w, inputs, false)).output(out);
  const MlpGraph probe_graph = build_mlp_graph(spec, {.rows = n});
  ad::Bindings probe_bindings = bind_params(spec, w);

  std::vector<double> point_means(m);
  std::vector<double> first_point_probes;
  for (std::size_t i = 0; i < m; ++i) {
    CounterRng rng(options.seed, Stream::Probe, i);
    const auto x = inputs.values().subspan(i * dim, dim);
    std::vector<double> batch(n * dim);
    for (std::size_t k = 0; k < n; ++k) {
      const auto z = sample_projected_normal(dim, options.projection, rng);
      for (std::size_t j = 0; j < dim; ++j) batch[k * dim + j] = x[j] + eps * z[j];
    }
    probe_bindings.insert_or_assign("x", ad::Tensor::matrix(n, dim, std::move(batch)));
    const ad::Tensor perturbed = ad::evaluate(probe_graph.tape, probe_bindings).output(out);
    std::vector<double> q(n);
    for (std::size_t k = 0; k < n; ++k) {
      double sq = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double diff = perturbed.at(k, c) - clean.at(i, c);
        sq += diff * diff;
      }
      q[k] = sq / (eps * eps);
    }
    point_means[i] = summarize(q).mean;
    if (i == 0) first_point_probes = std::move(q);
  }

  TraceEstimate est{.probes_per_point = n, .points = m, .epsilon = eps};
  const auto over_points = summarize(point_means);
  est.q_hat = over_points.mean;
  est.std_error = m >= 2 ? over_points.std_error : summarize(first_point_probes).std_error;
  return est;
}

namespace {

struct FieldMoments {
  std::vector<double> trace;
  std::vector<double> trace_sq;  // tr(A^2)
  std::vector<double> cumulative;
};

FieldMoments field_moments(const MatrixField& field) {
  if (field.matrices.empty()) throw Error("invalid_argument", "matrix field is empty");
  if (!field.probabilities.empty() && field.probabilities.size() != field.matrices.size()) {
    throw LengthMismatch("matrix field: one probability per matrix required");
  }
  FieldMoments fm;
  const std::size_t d = field.matrices.front().rows();
  double running = 0.0;
  for (std::size_t j = 0; j < field.matrices.size(); ++j) {
    const ad::Tensor& a = field.matrices[j];
    if (a.rank() != 2 || a.rows() != d || a.cols() != d) throw ad::ShapeError("matrix field: matrices must be d x d");
    double tr = 0.0, tr2 = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      tr += a.at(r, r);
      for (std::size_t c = 0; c < d; ++c) tr2 += a.at(r, c) * a.at(c, r);
    }
    fm.trace.push_back(tr);
    fm.trace_sq.push_back(tr2);
    running += field.probabilities.empty() ? 1.0 / static_cast<double>(field.matrices.size()) : field.probabilities[j];
    fm.cumulative.push_back(running);
  }
  return fm;
}

double field_probability(const MatrixField& field, std::size_t j) {
  return field.probabilities.empty() ? 1.0 / static_cast<double>(field.matrices.size()) : field.probabilities[j];
}

}  // namespace

double trace_estimator_variance(const MatrixField& field, std::size_t probes, std::size_t points) {
  const FieldMoments fm = field_moments(field);
  double mean_tr = 0.0, mean_tr_sq = 0.0, mean_tr2 = 0.0;
  for (std::size_t j = 0; j < fm.trace.size(); ++j) {
    const double p = field_probability(field, j);
    mean_tr += p * fm.trace[j];
    mean_tr_sq += p * fm.trace[j] * fm.trace[j];
    mean_tr2 += p * fm.trace_sq[j];
  }
  const double var_tr = mean_tr_sq - mean_tr * mean_tr;
  return (var_tr + 2.0 / static_cast<double>(probes) * mean_tr2) / static_cast<double>(points);
}

VarianceReport estimator_variance_check(const MatrixField& field, std::size_t probes, std::size_t points,
                                        std::size_t trials, std::uint64_t seed) {
  if (probes == 0 || points == 0 || trials < 2) throw Error("invalid_argument", "need probes, points >= 1 and trials >= 2");
  const FieldMoments fm = field_moments(field);
  const std::size_t d = field.matrices.front().rows();

  std::vector<double> estimates(trials);
  std::vector<double> z(d);
  for (std::size_t t = 0; t < trials; ++t) {
    CounterRng rng(seed, Stream::Probe, t);
    double q_hat = 0.0;
    for (std::size_t i = 0; i < points; ++i) {
      const double u = rng.uniform() * fm.cumulative.back();
      const std::size_t j = static_cast<std::size_t>(
          std::upper_bound(fm.cumulative.begin(), fm.cumulative.end(), u) - fm.cumulative.begin());
      const ad::Tensor& a = field.matrices[std::min(j, field.matrices.size() - 1)];
      double point_sum = 0.0;
      for (std::size_t k = 0; k < probes; ++k) {
        for (double& v : z) v = rng.normal();
        double q = 0.0;
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c) q += z[r] * a.at(r, c) * z[c];
        point_sum += q;
      }
      q_hat += point_sum / static_cast<double>(probes);
    }
    estimates[t] = q_hat / static_cast<double>(points);
  }

  VarianceReport report;
  report.trials = trials;
  const auto s = summarize(estimates);
  report.empirical_mean = s.mean;
  report.empirical_variance = s.std_error * s.std_error * static_cast<double>(trials);
  for (std::size_t j = 0; j < fm.trace.size(); ++j) report.expected_mean += field_probability(field, j) * fm.trace[j];
  report.closed_form_variance = trace_estimator_variance(field, probes, points);
  report.ratio = report.closed_form_variance > 0.0 ? report.empirical_variance / report.closed_form_variance : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Hessian

double hessian_trace_fd(const std::function<ParamVector(const ParamVector&)>& gradient, const ParamVector& w,
                        double h) {
  if (!(h > 0.0)) throw Error("invalid_argument", "finite-difference step must be positive");
  std::vector<double> probe(w.values().begin(), w.values().end());
  double trace = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    probe[j] = w[j] + h;
    const double up = gradient(ParamVector(probe))[j];
    probe[j] = w[j] - h;
    const double down = gradient(ParamVector(probe))[j];
    probe[j] = w[j];
    trace += (up - down) / (2.0 * h);
  }
  return trace;
}

namespace {

MlpGraph risk_graph(const MlpSpec& spec, const ad::Tensor& targets, Head head, bool with_grad) {
  MlpGraph g = build_mlp_graph(spec, {.rows = targets.rows(), .params_require_grad = with_grad});
  const auto y = g.tape.constant(targets, "targets");
  const auto f = head == Head::Logits ? g.logits : g.probabilities;
  g.tape.output("risk", g.tape.scale(g.tape.sum(g.tape.square(g.tape.sub(f, y))),
                                     1.0 / static_cast<double>(targets.rows())));
  return g;
}

void check_targets(const MlpSpec& spec, const ad::Tensor& inputs, const ad::Tensor& targets) {
  if (inputs.rank() != 2 || inputs.cols() != spec.input_dim() || targets.rank() != 2 ||
      targets.cols() != spec.num_classes() || targets.rows() != inputs.rows()) {
    throw ad::ShapeError("mse risk: inputs/targets do not match the network");
  }
}

}  // namespace

double mse_risk(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs, const ad::Tensor& targets,
                Head head) {
  check_targets(spec, inputs, targets);
  const MlpGraph g = risk_graph(spec, targets, head, false);
  return ad::evaluate(g.tape, bindings_for(spec, w, inputs, false)).output("risk").item();
}

ParamVector mse_risk_gradient(const ParamVector& w, const MlpSpec& spec, const ad::Tensor& inputs,
                              const ad::Tensor& targets, Head head) {
  check_targets(spec, inputs, targets);
  const MlpGraph g = risk_graph(spec, targets, head, true);
  const auto ev = ad::evaluate(g.tape, bindings_for(spec, w, inputs, true));
  return gather_param_gradient(spec, ad::backward(ev, {{"risk", ad::Tensor::scalar(1.0)}}));
}

HessianDecomp hessian_trace_decomposition(const ParamVector& w, const MlpSpec& spec, std::span<const double> x,
                                          std::span<const double> y, Head head, double h) {
  if (spec.hidden_activation != Activation::Softplus && spec.num_layers() > 1) {
    throw Error("non_smooth", "Hessian decomposition needs a smooth activation (softplus), not relu");
  }
  const std::size_t classes = spec.num_classes();
  if (y.size() != classes || x.size() != spec.input_dim()) throw ad::ShapeError("hessian decomposition: bad x or y size");
  const ad::Tensor xin = row_matrix(x);
  const ad::Tensor target = row_matrix(y);

  HessianDecomp out;
  out.tr_h = hessian_trace_fd([&](const ParamVector& v) { return mse_risk_gradient(v, spec, xin, target, head); }, w, h);
  out.jw_frobenius = exact_jacobian_frobenius(w, spec, xin, JacobianWrt::Weights, head);
  out.gn_term = 2.0 * out.jw_frobenius;
  out.implied_residual = out.tr_h - out.gn_term;

  // Per-output Hessian traces from finite differences of each output's
  // gradient, weighted by the residual f_i - y_i.
  const MlpGraph g = build_mlp_graph(spec, {.rows = 1, .params_require_grad = true});
  const char* name = head_output(head);
  const ad::Tensor f = ad::evaluate(g.tape, bindings_for(spec, w, xin, false)).output(name);
  for (std::size_t i = 0; i < classes; ++i) {
    const double weight = f[i] - y[i];
    if (weight == 0.0) continue;
    auto output_gradient = [&](const ParamVector& v) {
      const auto ev = ad::evaluate(g.tape, bindings_for(spec, v, xin, true));
      std::vector<double> seed(classes, 0.0);
      seed[i] = 1.0;
      return gather_param_gradient(spec, ad::backward(ev, {{name, ad::Tensor::matrix(1, classes, seed)}}));
    };
    out.residual += 2.0 * weight * hessian_trace_fd(output_gradient, w, h);
  }
  return out;
}

SharpnessCheck ray_sharpness_expansion_check(const ad::ScalarFunction& risk, const ParamVector& w, double trace_h,
                                             double s, std::size_t directions, std::uint64_t seed) {
  if (directions == 0) throw Error("invalid_argument", "need at least one direction");
  const std::size_t pairs = (directions + 1) / 2;
  const double base = risk(w.values());
  std::vector<double> increments(pairs);
  for (std::size_t j = 0; j < pairs; ++j) {
    CounterRng rng(seed, Stream::Ray, j);
    const ParamVector d = random_unit_direction(w.size(), rng);
    const double plus = risk(step_along(w, d, s).values());
    const double minus = risk(step_along(w, d, -s).values());
    increments[j] = 0.5 * (plus + minus) - base;
  }
  const auto stats = summarize(increments);
  return {stats.mean, s * s / (2.0 * static_cast<double>(w.size())) * trace_h, stats.std_error};
}

// ---------------------------------------------------------------------------
// Gaussian iterates

void IterateSimSpec::validate() const {
  const bool ok = n > 0 && trials >= 2 && eta1 > 0.0 && eta2 > eta1 && !sigma_diag.empty() &&
                  sigma_diag.size() == w0.size() &&
                  std::all_of(sigma_diag.begin(), sigma_diag.end(), [](double s) { return s > 0.0; });
  if (!ok) throw Error("invalid_config", "iterate simulation needs n, trials > 0, 0 < eta1 < eta2, positive sigma");
}

namespace {

double trace_sigma(const IterateSimSpec& spec) {
  return std::accumulate(spec.sigma_diag.begin(), spec.sigma_diag.end(), 0.0);
}

}  // namespace

double swa_mse_theory(const IterateSimSpec& spec) { return spec.eta1 / static_cast<double>(spec.n) * trace_sigma(spec); }

double fast_swa_mse_theory(const IterateSimSpec& spec, std::size_t m) {
  const double n = static_cast<double>(spec.n);
  const double mm = static_cast<double>(m);
  return (n * spec.eta1 + mm * spec.eta2) / ((n + mm) * (n + mm)) * trace_sigma(spec);
}

double fast_swa_threshold(const IterateSimSpec& spec) {
  return static_cast<double>(spec.n) * (spec.eta2 / spec.eta1 - 2.0);
}

CrossoverReport crossover_scan(const IterateSimSpec& spec, std::span<const std::size_t> ms) {
  spec.validate();
  if (ms.empty()) throw Error("invalid_argument", "crossover scan needs at least one m");
  std::vector<std::size_t> sorted(ms.begin(), ms.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const std::size_t p = spec.w0.size();
  const std::size_t m_max = sorted.back();
  const std::size_t grid = sorted.size();

  std::vector<double> swa_err(spec.trials);
  std::vector<std::vector<double>> fswa_err(grid, std::vector<double>(spec.trials));
  std::vector<double> sd1(p), sd2(p);
  for (std::size_t j = 0; j < p; ++j) {
    sd1[j] = std::sqrt(spec.eta1 * spec.sigma_diag[j]);
    sd2[j] = std::sqrt(spec.eta2 * spec.sigma_diag[j]);
  }

  std::vector<double> sum_low(p), sum_all(p);
  for (std::size_t t = 0; t < spec.trials; ++t) {
    CounterRng rng(spec.seed, Stream::Simulation, t);
    std::fill(sum_low.begin(), sum_low.end(), 0.0);
    for (std::size_t i = 0; i < spec.n; ++i)
      for (std::size_t j = 0; j < p; ++j) sum_low[j] += sd1[j] * rng.normal();
    double e = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double dev = sum_low[j] / static_cast<double>(spec.n);
      e += dev * dev;
    }
    swa_err[t] = e;

    sum_all = sum_low;
    std::size_t next = 0;
    for (std::size_t count = 0; count <= m_max && next < grid; ++count) {
      while (next < grid && sorted[next] == count) {
        double ef = 0.0;
        const double denom = static_cast<double>(spec.n + count);
        for (std::size_t j = 0; j < p; ++j) ef += (sum_all[j] / denom) * (sum_all[j] / denom);
        fswa_err[next][t] = ef;
        ++next;
      }
      if (count < m_max)
        for (std::size_t j = 0; j < p; ++j) sum_all[j] += sd2[j] * rng.normal();
    }
  }
  // Errors above are measured relative to w0 directly (samples are drawn as
  // deviations), so w0 itself never enters the arithmetic.

  CrossoverReport report;
  report.threshold = fast_swa_threshold(spec);
  const auto swa_stats = summarize(swa_err);
  bool all_below_worse = true, all_above_better = true, any_below = false, any_above = false;
  for (std::size_t g = 0; g < grid; ++g) {
    std::vector<double> diff(spec.trials);
    for (std::size_t t = 0; t < spec.trials; ++t) diff[t] = fswa_err[g][t] - swa_err[t];
    const auto f = summarize(fswa_err[g]);
    const auto d = summarize(diff);
    IterateSimRow row{.m = sorted[g],
                      .mse_swa = swa_stats.mean,
                      .se_swa = swa_stats.std_error,
                      .theory_swa = swa_mse_theory(spec),
                      .mse_fswa = f.mean,
                      .se_fswa = f.std_error,
                      .theory_fswa = fast_swa_mse_theory(spec, sorted[g]),
                      .diff = d.mean,
                      .se_diff = d.std_error};
    if (!report.empirical_crossover && row.diff < 0.0) report.empirical_crossover = row.m;
    const double m = static_cast<double>(row.m);
    if (m < report.threshold) {
      any_below = true;
      all_below_worse = all_below_worse && row.diff > 3.0 * row.se_diff;
    } else if (m > report.threshold) {
      any_above = true;
      all_above_better = all_above_better && row.diff < -3.0 * row.se_diff;
    }
    report.rows.push_back(row);
  }
  report.bracketed = any_below && any_above && all_below_worse && all_above_better;
  return report;
}

IterateSimRow gaussian_iterate_mse_sim(const IterateSimSpec& spec) {
  const std::size_t ms[] = {spec.m};
  return crossover_scan(spec, ms).rows.front();
}

}  // namespace fswa
