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

#include "fswa/experiment.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fswa/config.hpp"

namespace fswa {

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0' || configured.is_absolute()) return configured;
  return std::filesystem::path(root) / configured;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw Error("io", fmt::format("write failed for '{}'", path.string()));
}

// ---------------------------------------------------------------------------
// CSV

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::cell(const std::string& text) {
  current_.push_back(text);
  return *this;
}

CsvTable& CsvTable::cell(double value) { return cell(fmt::format("{:.12g}", value)); }

CsvTable& CsvTable::cell(std::size_t value) { return cell(fmt::format("{}", value)); }

void CsvTable::end_row() {
  if (current_.size() != header_.size()) {
    throw Error("internal", fmt::format("csv row has {} cells, header has {}", current_.size(), header_.size()));
  }
  rows_.push_back(std::move(current_));
  current_.clear();
}

std::string CsvTable::str() const {
  std::string out = fmt::format("{}\n", fmt::join(header_, ","));
  for (const auto& row : rows_) out += fmt::format("{}\n", fmt::join(row, ","));
  return out;
}

std::string rays_csv(const std::vector<std::pair<std::string, RayProfile>>& rays) {
  CsvTable t({"ray", "t_or_s", "distance", "train_err", "test_err"});
  for (const auto& [name, profile] : rays) {
    for (const auto& p : profile.points) {
      t.cell(name).cell(p.position).cell(p.distance).cell(p.train_err).cell(p.test_err);
      t.end_row();
    }
  }
  return t.str();
}

std::string gains_csv(const std::vector<NamedModel>& models, const MlpSpec& spec, const LabeledSet& eval) {
  CsvTable t({"model_a", "model_b", "err_a", "err_b", "diversity", "ensemble_gain", "average_gain"});
  std::vector<Predictions> preds;
  for (const auto& m : models) preds.push_back(forward(m.params, spec, eval.x));
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      t.cell(models[i].name)
          .cell(models[j].name)
          .cell(error_rate(preds[i], eval.y))
          .cell(error_rate(preds[j], eval.y))
          .cell(diversity(preds[i], preds[j]))
          .cell(ensemble_gain(preds[i], preds[j], eval.y))
          .cell(average_gain(models[i].params, models[j].params, spec, eval));
      t.end_row();
    }
  }
  return t.str();
}

std::string trace_csv(const std::vector<NamedModel>& models, const MlpSpec& spec, const ad::Tensor& inputs,
                      const TraceOptions& options) {
  CsvTable t({"model", "q_hat", "exact", "stderr", "epsilon", "probes", "points"});
  for (const auto& m : models) {
    const TraceEstimate est = jacobian_trace_estimate(m.params, spec, inputs, options);
    const double exact =
        exact_jacobian_frobenius(m.params, spec, inputs, JacobianWrt::Input, options.head, options.projection);
    t.cell(m.name).cell(est.q_hat).cell(exact).cell(est.std_error).cell(est.epsilon).cell(est.probes_per_point).cell(
        est.points);
    t.end_row();
  }
  return t.str();
}

std::string hessian_csv(const HessianDecomp& d) {
  CsvTable t({"tr_h", "gn_term", "residual", "implied_residual", "jw_frobenius", "closure_rel"});
  const double closure = d.tr_h != 0.0 ? std::abs(d.tr_h - d.gn_term - d.residual) / std::abs(d.tr_h) : 0.0;
  t.cell(d.tr_h).cell(d.gn_term).cell(d.residual).cell(d.implied_residual).cell(d.jw_frobenius).cell(closure);
  t.end_row();
  return t.str();
}

std::string simiter_csv(const CrossoverReport& report) {
  CsvTable t({"m", "mse_swa", "se_swa", "theory_swa", "mse_fswa", "se_fswa", "theory_fswa", "diff", "se_diff",
              "threshold", "bracketed"});
  for (const auto& r : report.rows) {
    t.cell(r.m).cell(r.mse_swa).cell(r.se_swa).cell(r.theory_swa).cell(r.mse_fswa).cell(r.se_fswa).cell(r.theory_fswa);
    t.cell(r.diff).cell(r.se_diff).cell(report.threshold).cell(std::string(report.bracketed ? "true" : "false"));
    t.end_row();
  }
  return t.str();
}

// ---------------------------------------------------------------------------
// Runs

namespace {

CheckpointHeader header_for(const ExperimentConfig& config, const std::string& role, std::size_t epochs,
                            std::size_t spe, std::size_t count = 0) {
  CheckpointHeader h;
  h.widths = config.model.layer_widths;
  h.activation = config.model.hidden_activation == Activation::Relu ? "relu" : "softplus";
  h.epoch = epochs;
  h.step = epochs * spe;
  h.seed = config.seed;
  h.schedule_position = static_cast<double>(epochs);
  h.role = role;
  h.count = count;
  return h;
}

std::vector<NamedModel> final_models(const TrainResult& result) {
  std::vector<NamedModel> models{{"student", result.student}, {"teacher", result.teacher.weights}};
  for (const auto& a : result.averagers) {
    if (a.count > 0) models.push_back({averager_name(a.policy.kind), a.mean});
  }
  return models;
}

}  // namespace

void write_reports(const ExperimentConfig& config, const DatasetSplit& split, const TrainResult& result,
                   const std::filesystem::path& dir) {
  const MlpSpec& spec = config.model;
  const auto models = final_models(result);
  for (const auto& report : config.reports) {
    if (report == "trace") {
      const std::size_t points = std::min<std::size_t>(split.test.rows(), 200);
      std::vector<std::size_t> rows(points);
      for (std::size_t i = 0; i < points; ++i) rows[i] = i;
      TraceOptions options;
      options.probes_per_point = 10;
      options.seed = derive_seed(config.seed, Stream::Probe, 0);
      write_text_file(dir / "trace.csv", trace_csv(models, spec, gather_rows(split.test.x, rows), options));
    } else if (report == "gains") {
      std::vector<NamedModel> all = models;
      for (const auto& snap : result.snapshots) all.push_back({fmt::format("epoch_{}", snap.epoch), snap.params});
      write_text_file(dir / "gains.csv", gains_csv(all, spec, split.test));
    } else if (report == "rays") {
      std::vector<std::pair<std::string, RayProfile>> rays;
      std::vector<double> t_grid, s_grid;
      for (int i = -5; i <= 15; ++i) t_grid.push_back(0.1 * i);
      for (int i = 0; i <= 20; ++i) s_grid.push_back(0.5 * i);
      for (std::size_t i = 2; i < models.size(); ++i) {
        RaySpec r{.origin = result.student, .kind = RayKind::SgdSgd, .endpoint = models[i].params, .grid = t_grid};
        rays.emplace_back("student_to_" + models[i].name, ray_profile(r, spec, split.labeled, split.test));
      }
      RaySpec random{.origin = result.student, .kind = RayKind::Random, .seed = derive_seed(config.seed, Stream::Ray, 0),
                     .grid = s_grid};
      rays.emplace_back("random", ray_profile(random, spec, split.labeled, split.test));
      try {
        RaySpec adv{.origin = result.student, .kind = RayKind::Adversarial, .grid = s_grid};
        rays.emplace_back("adversarial_train", ray_profile(adv, spec, split.labeled, split.test));
      } catch (const Error& e) {
        if (e.kind() != "degenerate_direction") throw;
      }
      write_text_file(dir / "rays.csv", rays_csv(rays));
    }
  }
}

RunOutcome run_experiment(ExperimentConfig config) {
  const DatasetSplit split = load_dataset(config);
  resolve_for_dataset(config, split);
  config.validate();

  RunOutcome outcome;
  outcome.output_dir = resolve_output_dir(config.output_dir);
  std::filesystem::create_directories(outcome.output_dir);
  const auto& dir = outcome.output_dir;
  std::filesystem::remove(dir / "DIVERGED");

  TrainResult result;
  try {
    result = train(config, split);
  } catch (const TrainingDiverged& e) {
    const TrainResult& partial = e.partial();
    write_text_file(dir / "metrics.csv", partial.metrics.to_csv());
    save_checkpoint(dir / "student_last_good.fswa", partial.student,
                    header_for(config, "student", e.epoch(), partial.steps_per_epoch));
    write_text_file(dir / "DIVERGED", fmt::format("{}\n", e.what()));
    outcome.diverged = e.what();
    outcome.epochs_completed = partial.metrics.rows.size();
    return outcome;
  }

  const std::size_t spe = result.steps_per_epoch;
  write_text_file(dir / "metrics.csv", result.metrics.to_csv());
  save_checkpoint(dir / "student.fswa", result.student, header_for(config, "student", config.epochs, spe));
  save_checkpoint(dir / "teacher.fswa", result.teacher.weights, header_for(config, "teacher", config.epochs, spe));
  for (const auto& a : result.averagers) {
    const std::string role = averager_name(a.policy.kind);
    // An averager that never collected falls back to the student weights.
    const ParamVector& w = a.count > 0 ? a.mean : result.student;
    save_checkpoint(dir / (role + ".fswa"), w, header_for(config, role, config.epochs, spe, a.count));
  }
  for (const auto& snap : result.snapshots) {
    save_checkpoint(dir / fmt::format("student_epoch{}.fswa", snap.epoch), snap.params,
                    header_for(config, "student", snap.epoch + 1, spe));
  }
  write_reports(config, split, result, dir);
  outcome.epochs_completed = config.epochs;
  return outcome;
}

}  // namespace fswa
