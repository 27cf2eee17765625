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

// Command-line entry point: training runs, geometry analyses and checkpoint
// utilities. Every failure prints one `error: <kind>: <message>` line to
// stderr and exits nonzero.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "fswa/config.hpp"
#include "fswa/experiment.hpp"
#include "fswa/geometry.hpp"

namespace {

using namespace fswa;

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
}

struct DataContext {
  ExperimentConfig config;
  DatasetSplit split;
};

DataContext data_from_config(const std::string& path) {
  DataContext ctx{load_config(path), {}};
  ctx.split = load_dataset(ctx.config);
  resolve_for_dataset(ctx.config, ctx.split);
  return ctx;
}

Checkpoint load_matching(const std::string& path, const MlpSpec* expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (expected && ckpt.header.widths != expected->layer_widths) {
    throw Error("length_mismatch", fmt::format("checkpoint '{}' has widths that do not match the config", path));
  }
  return ckpt;
}

std::vector<NamedModel> load_models(const std::vector<std::string>& paths, const MlpSpec& spec) {
  std::vector<NamedModel> models;
  for (const auto& p : paths) {
    models.push_back({std::filesystem::path(p).stem().string(), load_matching(p, &spec).params});
  }
  return models;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::size_t start = 0;
  while (start <= text.size() && !text.empty()) {
    const auto comma = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, comma - start);
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("usage", fmt::format("bad grid value '{}'", item));
    }
    start = comma + 1;
  }
  return grid;
}

Head parse_head(const std::string& name) { return name == "logits" ? Head::Logits : Head::Probabilities; }

struct TrainOverrides {
  bool swa = false;
  bool fast_swa = false;
  std::optional<std::size_t> stride;
  std::optional<double> cycle_len;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> output_dir;
};

int run_train(const std::string& config_path, const TrainOverrides& o) {
  ExperimentConfig config = load_config(config_path);
  if (o.cycle_len) {
    config.schedule.cycle_len = *o.cycle_len;
    config.schedule.validate();
    // Averager defaults depend on the cycle, so rebuild them.
    for (auto& policy : config.averagers) {
      policy = policy.kind == AveragerKind::Swa ? CollectionPolicy::swa(config.schedule)
                                                : CollectionPolicy::fast_swa(config.schedule, policy.stride_steps);
    }
  }
  const auto has = [&](AveragerKind kind) {
    return std::any_of(config.averagers.begin(), config.averagers.end(), [&](const auto& p) { return p.kind == kind; });
  };
  if (o.swa && !has(AveragerKind::Swa)) config.averagers.push_back(CollectionPolicy::swa(config.schedule));
  if (o.fast_swa && !has(AveragerKind::FastSwa)) config.averagers.push_back(CollectionPolicy::fast_swa(config.schedule, 1));
  if (o.stride) {
    config.fast_swa_stride_epochs = 0;
    for (auto& policy : config.averagers)
      if (policy.kind == AveragerKind::FastSwa) policy.stride_steps = *o.stride;
  }
  if (o.seed) config.seed = config.data.seed = *o.seed;
  if (o.epochs) config.epochs = *o.epochs;
  if (o.output_dir) config.output_dir = *o.output_dir;

  const RunOutcome outcome = run_experiment(std::move(config));
  if (outcome.diverged) {
    std::cerr << fmt::format("error: diverged: {} (partial artifacts in {})\n", *outcome.diverged,
                             outcome.output_dir.string());
    return kExitDiverged;
  }
  std::cout << fmt::format("wrote {} epochs to {}\n", outcome.epochs_completed, outcome.output_dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight averaging for consistency-regularized training"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint_path, endpoint_path, kind = "sgd_sgd", split_name = "train";
  std::string grid_text = "0,0.25,0.5,0.75,1", head_name = "probabilities", widths_text = "2,6,2";
  std::vector<std::string> checkpoints;
  std::uint64_t seed = 0;
  double epsilon = 1e-4, fd_step = 1e-5, eta1 = 1.0, eta2 = 4.0, sigma = 1.0;
  std::size_t probes = 10, points = 200, index = 0, n = 10, dim = 10, trials = 10000;
  std::vector<std::size_t> ms = {10, 20, 30};

  auto* train_cmd = app.add_subcommand("train", "Train from a config file");
  train_cmd->add_option("config", config_path, "Config file")->required();
  TrainOverrides overrides;
  train_cmd->add_flag("--swa", overrides.swa, "Add an SWA averager");
  train_cmd->add_flag("--fast-swa", overrides.fast_swa, "Add a fast-SWA averager");
  train_cmd->add_option("--stride", overrides.stride, "Fast-SWA stride in optimizer steps")->check(CLI::PositiveNumber);
  train_cmd->add_option("--cycle-len", overrides.cycle_len, "Cycle length in epochs");
  train_cmd->add_option("--seed", overrides.seed, "Run and data seed");
  train_cmd->add_option("--epochs", overrides.epochs, "Number of epochs");
  train_cmd->add_option("--output-dir", overrides.output_dir, "Output directory");

  auto* analyze = app.add_subcommand("analyze", "Geometry analyses (CSV output)");
  analyze->require_subcommand(1);

  auto* rays = analyze->add_subcommand("rays", "Error profile along a ray");
  rays->add_option("--config", config_path, "Config describing the data")->required();
  rays->add_option("--checkpoint", checkpoint_path, "Ray origin")->required();
  rays->add_option("--endpoint", endpoint_path, "Ray end for sgd_sgd");
  rays->add_option("--kind", kind, "sgd_sgd|random|adversarial")
      ->check(CLI::IsMember({"sgd_sgd", "random", "adversarial"}));
  rays->add_option("--split", split_name, "Adversarial loss split: train|test")->check(CLI::IsMember({"train", "test"}));
  rays->add_option("--grid", grid_text, "Comma-separated t or s values");
  rays->add_option("--seed", seed, "Direction seed");
  rays->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* div = analyze->add_subcommand("diversity", "Pairwise prediction diversity on the test set");
  div->add_option("--config", config_path, "Config describing the data")->required();
  div->add_option("checkpoints", checkpoints, "Checkpoints")->required()->expected(2, -1);
  div->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* gains = analyze->add_subcommand("gains", "Pairwise diversity, ensembling and averaging gains");
  gains->add_option("--config", config_path, "Config describing the data")->required();
  gains->add_option("checkpoints", checkpoints, "Checkpoints")->required()->expected(2, -1);
  gains->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* trace = analyze->add_subcommand("trace", "Jacobian trace estimate versus the exact value");
  trace->add_option("--config", config_path, "Config describing the data")->required();
  trace->add_option("checkpoints", checkpoints, "Checkpoints")->required()->expected(1, -1);
  trace->add_option("--epsilon", epsilon, "Finite perturbation scale");
  trace->add_option("--probes", probes, "Probes per point");
  trace->add_option("--points", points, "Test points used");
  trace->add_option("--head", head_name, "probabilities|logits")->check(CLI::IsMember({"probabilities", "logits"}));
  trace->add_option("--seed", seed, "Probe seed");
  trace->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* hessian = analyze->add_subcommand("hessian", "Hessian trace decomposition of the squared error");
  hessian->add_option("--checkpoint", checkpoint_path, "Softplus checkpoint (random network when absent)");
  hessian->add_option("--config", config_path, "Config describing the data (with --checkpoint)");
  hessian->add_option("--index", index, "Test example index");
  hessian->add_option("--widths", widths_text, "Layer widths of the random network");
  hessian->add_option("--seed", seed, "Seed of the random network and example");
  hessian->add_option("--head", head_name, "probabilities|logits")->check(CLI::IsMember({"probabilities", "logits"}));
  hessian->add_option("--fd-step", fd_step, "Finite-difference step");
  hessian->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* simiter = analyze->add_subcommand("simiter", "Gaussian-iterate MSE of SWA and fast-SWA");
  simiter->add_option("--n", n, "Low learning-rate samples");
  simiter->add_option("--m", ms, "High learning-rate sample counts")->delimiter(',');
  simiter->add_option("--eta1", eta1, "Low learning rate");
  simiter->add_option("--eta2", eta2, "High learning rate");
  simiter->add_option("--dim", dim, "Dimension");
  simiter->add_option("--sigma", sigma, "Diagonal covariance entry");
  simiter->add_option("--trials", trials, "Monte-Carlo trials");
  simiter->add_option("--seed", seed, "Simulation seed");
  simiter->add_option("-o,--output", out_path, "Output CSV (default stdout)");

  auto* avg = app.add_subcommand("avg", "Uniformly average checkpoints");
  avg->add_option("checkpoints", checkpoints, "Checkpoints")->required()->expected(1, -1);
  avg->add_option("-o,--output", out_path, "Output checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect", "Print a checkpoint header");
  inspect->add_option("checkpoint", checkpoint_path, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << fmt::format("error: usage: {}\n", e.what());
    return kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(config_path, overrides);

    if (*rays) {
      const DataContext data = data_from_config(config_path);
      RaySpec spec{.origin = load_matching(checkpoint_path, &data.config.model).params, .seed = seed,
                   .grid = parse_grid(grid_text)};
      if (kind == "sgd_sgd") {
        if (endpoint_path.empty()) throw Error("usage", "sgd_sgd rays need --endpoint");
        spec.endpoint = load_matching(endpoint_path, &data.config.model).params;
      } else {
        spec.kind = kind == "random" ? RayKind::Random : RayKind::Adversarial;
        spec.adversarial_split = split_name == "train" ? DataSelector::Train : DataSelector::Test;
      }
      const RayProfile profile = ray_profile(spec, data.config.model, data.split.labeled, data.split.test);
      emit(out_path, rays_csv({{kind, profile}}));
    } else if (*div) {
      const DataContext data = data_from_config(config_path);
      const auto models = load_models(checkpoints, data.config.model);
      CsvTable t({"model_a", "model_b", "diversity"});
      std::vector<Predictions> preds;
      for (const auto& m : models) preds.push_back(forward(m.params, data.config.model, data.split.test.x));
      for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
          t.cell(models[i].name).cell(models[j].name).cell(diversity(preds[i], preds[j]));
          t.end_row();
        }
      }
      emit(out_path, t.str());
    } else if (*gains) {
      const DataContext data = data_from_config(config_path);
      emit(out_path, gains_csv(load_models(checkpoints, data.config.model), data.config.model, data.split.test));
    } else if (*trace) {
      const DataContext data = data_from_config(config_path);
      const std::size_t m = std::min(points, data.split.test.rows());
      std::vector<std::size_t> rows(m);
      for (std::size_t i = 0; i < m; ++i) rows[i] = i;
      TraceOptions options{.epsilon = epsilon, .probes_per_point = probes, .head = parse_head(head_name), .seed = seed};
      emit(out_path, trace_csv(load_models(checkpoints, data.config.model), data.config.model,
                               gather_rows(data.split.test.x, rows), options));
    } else if (*hessian) {
      MlpSpec spec;
      ParamVector w;
      std::vector<double> x, y;
      if (!checkpoint_path.empty()) {
        if (config_path.empty()) throw Error("usage", "--checkpoint needs --config for the example");
        const DataContext data = data_from_config(config_path);
        const Checkpoint ckpt = load_matching(checkpoint_path, &data.config.model);
        spec = spec_from_header(ckpt.header);
        w = ckpt.params;
        if (index >= data.split.test.rows()) throw Error("usage", fmt::format("--index {} out of range", index));
        const auto row = data.split.test.x.values().subspan(index * spec.input_dim(), spec.input_dim());
        x.assign(row.begin(), row.end());
        y.assign(spec.num_classes(), 0.0);
        y[data.split.test.y[index]] = 1.0;
      } else {
        spec.hidden_activation = Activation::Softplus;
        for (double v : parse_grid(widths_text)) spec.layer_widths.push_back(static_cast<std::size_t>(v));
        spec.validate();
        w = init_mlp(spec, seed);
        CounterRng rng(seed, Stream::Test, 0);
        for (std::size_t i = 0; i < spec.input_dim(); ++i) x.push_back(rng.normal());
        for (std::size_t i = 0; i < spec.num_classes(); ++i) y.push_back(rng.uniform());
      }
      emit(out_path, hessian_csv(hessian_trace_decomposition(w, spec, x, y, parse_head(head_name), fd_step)));
    } else if (*simiter) {
      IterateSimSpec spec{.n = n, .eta1 = eta1, .eta2 = eta2, .sigma_diag = std::vector<double>(dim, sigma),
                          .w0 = std::vector<double>(dim, 0.0), .trials = trials, .seed = seed};
      emit(out_path, simiter_csv(crossover_scan(spec, ms)));
    } else if (*avg) {
      Checkpoint first = load_checkpoint(checkpoints.front());
      AveragerState acc{ParamVector{}, 0, {}};
      for (const auto& path : checkpoints) {
        const Checkpoint c = load_checkpoint(path);
        if (c.header.widths != first.header.widths || c.header.activation != first.header.activation) {
          throw Error("length_mismatch", fmt::format("'{}' has a different architecture", path));
        }
        acc = collect(acc, c.params);
      }
      CheckpointHeader header = first.header;
      header.role = "average";
      header.count = acc.count;
      save_checkpoint(out_path, acc.mean, header);
      std::cout << fmt::format("averaged {} checkpoints into {}\n", acc.count, out_path);
    } else if (*inspect) {
      const Checkpoint c = load_checkpoint(checkpoint_path);
      std::cout << header_json(c.header) << "\n";
      std::cout << fmt::format("l2_norm: {:.12g}\n", norm(c.params));
    }
  } catch (const Error& e) {
    std::cerr << fmt::format("error: {}: {}\n", e.kind(), e.what());
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << fmt::format("error: internal: {}\n", e.what());
    return kExitError;
  }
  return 0;
}
