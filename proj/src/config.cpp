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

#include "fswa/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace fswa {

ConfigError::ConfigError(std::size_t line, const std::string& key, const std::string& message)
    : Error("config", key.empty() ? fmt::format("line {}: {}", line, message)
                                  : fmt::format("line {}: key '{}': {}", line, key, message)),
      line_(line),
      key_(key) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct Entry {
  std::size_t line;
  std::string key;  // "section.key"
  std::string value;
};

class Reader {
 public:
  explicit Reader(const Entry& e) : e_(e) {}

  [[noreturn]] void fail(const std::string& message) const { throw ConfigError(e_.line, e_.key, message); }

  std::uint64_t u64() const {
    std::uint64_t v = 0;
    const auto* end = e_.value.data() + e_.value.size();
    const auto [ptr, ec] = std::from_chars(e_.value.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(fmt::format("expected a non-negative integer, got '{}'", e_.value));
    return v;
  }

  std::size_t size() const { return static_cast<std::size_t>(u64()); }

  double real() const {
    double v = 0.0;
    const auto* end = e_.value.data() + e_.value.size();
    const auto [ptr, ec] = std::from_chars(e_.value.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) fail(fmt::format("expected a finite number, got '{}'", e_.value));
    return v;
  }

  bool boolean() const {
    const std::string v = lower(e_.value);
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    fail(fmt::format("expected true or false, got '{}'", e_.value));
  }

  std::vector<std::string> words() const {
    std::vector<std::string> out;
    std::stringstream ss(e_.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto t = trim(item);
      if (t.empty()) fail("empty list element");
      out.emplace_back(t);
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& w : words()) {
      Entry sub = e_;
      sub.value = w;
      out.push_back(Reader(sub).size());
    }
    return out;
  }

  std::string choice(std::initializer_list<const char*> allowed) const {
    const std::string v = lower(e_.value);
    for (const char* a : allowed)
      if (v == a) return v;
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : "|") + a;
    fail(fmt::format("expected one of {}, got '{}'", list, e_.value));
  }

  const std::string& text() const { return e_.value; }

 private:
  const Entry& e_;
};

struct Pending {
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t blob_classes = 3;
  std::optional<std::uint64_t> data_seed;
  bool swa = false;
  bool fast_swa = false;
  std::size_t stride_steps = 1;
  std::optional<std::size_t> fast_swa_start;
  IdxSource idx;
  int idx_fields = 0;
};

using Handler = std::function<void(const Reader&, ExperimentConfig&, Pending&)>;

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table = {
      {"data.kind", [](const Reader& r, auto& c, auto&) {
         try {
           c.data.kind = parse_dataset_kind(lower(r.text()));
         } catch (const Error& e) {
           r.fail(e.what());
         }
       }},
      {"data.n_total", [](const Reader& r, auto& c, auto&) { c.data.n_total = r.size(); }},
      {"data.n_labeled", [](const Reader& r, auto& c, auto&) { c.data.n_labeled = r.size(); }},
      {"data.n_test", [](const Reader& r, auto& c, auto&) { c.data.n_test = r.size(); }},
      {"data.noise", [](const Reader& r, auto& c, auto&) { c.data.noise = r.real(); }},
      {"data.seed", [](const Reader& r, auto&, auto& p) { p.data_seed = r.u64(); }},
      {"data.blob_classes", [](const Reader& r, auto&, auto& p) { p.blob_classes = r.size(); }},
      {"data.train_images", [](const Reader& r, auto&, auto& p) { p.idx.train_images = r.text(); p.idx_fields |= 1; }},
      {"data.train_labels", [](const Reader& r, auto&, auto& p) { p.idx.train_labels = r.text(); p.idx_fields |= 2; }},
      {"data.test_images", [](const Reader& r, auto&, auto& p) { p.idx.test_images = r.text(); p.idx_fields |= 4; }},
      {"data.test_labels", [](const Reader& r, auto&, auto& p) { p.idx.test_labels = r.text(); p.idx_fields |= 8; }},
      {"data.num_classes", [](const Reader& r, auto&, auto& p) { p.idx.num_classes = r.size(); }},

      {"model.hidden", [](const Reader& r, auto&, auto& p) { p.hidden = r.sizes(); }},
      {"model.activation", [](const Reader& r, auto& c, auto&) {
         c.model.hidden_activation = r.choice({"relu", "softplus"}) == "relu" ? Activation::Relu : Activation::Softplus;
       }},
      {"model.dropout", [](const Reader& r, auto& c, auto&) { c.model.dropout_rate = r.real(); }},

      {"schedule.eta0", [](const Reader& r, auto& c, auto&) { c.schedule.eta0 = r.real(); }},
      {"schedule.ell0", [](const Reader& r, auto& c, auto&) { c.schedule.ell0 = r.real(); }},
      {"schedule.ell", [](const Reader& r, auto& c, auto&) { c.schedule.ell = r.real(); }},
      {"schedule.cycle_len", [](const Reader& r, auto& c, auto&) { c.schedule.cycle_len = r.real(); }},
      {"schedule.epochs", [](const Reader& r, auto& c, auto&) { c.epochs = r.size(); }},

      {"optimizer.momentum", [](const Reader& r, auto& c, auto&) { c.optimizer.momentum = r.real(); }},
      {"optimizer.weight_decay", [](const Reader& r, auto& c, auto&) { c.optimizer.weight_decay = r.real(); }},
      {"optimizer.nesterov", [](const Reader& r, auto& c, auto&) { c.optimizer.nesterov = r.boolean(); }},

      {"consistency.teacher", [](const Reader& r, auto& c, auto&) {
         const auto v = r.choice({"none", "pi", "mean_teacher"});
         c.consistency.teacher_mode = v == "none" ? TeacherMode::None : v == "pi" ? TeacherMode::Self : TeacherMode::Ema;
       }},
      {"consistency.divergence", [](const Reader& r, auto& c, auto&) {
         c.consistency.divergence = r.choice({"mse", "kl"}) == "mse" ? Divergence::Mse : Divergence::Kl;
       }},
      {"consistency.lambda_max", [](const Reader& r, auto& c, auto&) { c.consistency.lambda_ramp.lambda_max = r.real(); }},
      {"consistency.ramp_epochs", [](const Reader& r, auto& c, auto&) { c.consistency.lambda_ramp.ramp_epochs = r.real(); }},
      {"consistency.alpha", [](const Reader& r, auto& c, auto&) { c.alpha = r.real(); }},
      {"consistency.teacher_dropout", [](const Reader& r, auto& c, auto&) { c.consistency.teacher_dropout = r.boolean(); }},

      {"perturbation.noise_sigma", [](const Reader& r, auto& c, auto&) { c.perturbation.noise_sigma = r.real(); }},
      {"perturbation.translate_px", [](const Reader& r, auto& c, auto&) { c.perturbation.translate_px = r.size(); }},
      {"perturbation.image_side", [](const Reader& r, auto& c, auto&) { c.perturbation.image_side = r.size(); }},
      {"perturbation.dropout", [](const Reader& r, auto& c, auto&) { c.perturbation.dropout = r.boolean(); }},

      {"batch.labeled", [](const Reader& r, auto& c, auto&) { c.labeled_batch = r.size(); }},
      {"batch.unlabeled", [](const Reader& r, auto& c, auto&) { c.unlabeled_batch = r.size(); }},

      {"averaging.swa", [](const Reader& r, auto&, auto& p) { p.swa = r.boolean(); }},
      {"averaging.fast_swa", [](const Reader& r, auto&, auto& p) { p.fast_swa = r.boolean(); }},
      {"averaging.stride_steps", [](const Reader& r, auto&, auto& p) { p.stride_steps = r.size(); }},
      {"averaging.stride_epochs", [](const Reader& r, auto& c, auto&) { c.fast_swa_stride_epochs = r.size(); }},
      {"averaging.start_epoch", [](const Reader& r, auto&, auto& p) { p.fast_swa_start = r.size(); }},

      {"run.seed", [](const Reader& r, auto& c, auto&) { c.seed = r.u64(); }},
      {"run.output_dir", [](const Reader& r, auto& c, auto&) { c.output_dir = r.text(); }},
      {"run.snapshot_epochs", [](const Reader& r, auto& c, auto&) { c.snapshot_epochs = r.sizes(); }},
      {"run.reports", [](const Reader& r, auto& c, auto&) {
         c.reports.clear();
         for (const auto& w : r.words()) {
           const std::string v = lower(w);
           if (v != "trace" && v != "gains" && v != "rays") r.fail(fmt::format("unknown report '{}' (trace|gains|rays)", w));
           c.reports.push_back(v);
         }
       }},
  };
  return table;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  ExperimentConfig config;
  Pending pending;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "", "unterminated section header");
      section = lower(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw ConfigError(line_no, "", "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "", fmt::format("expected key = value, got '{}'", line));
    const std::string key = lower(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(line_no, "", "missing key before '='");
    if (section.empty()) throw ConfigError(line_no, key, "key outside of any [section]");
    const std::string full = section + "." + key;
    const Entry entry{line_no, full, std::string(trim(line.substr(eq + 1)))};
    if (entry.value.empty()) throw ConfigError(line_no, full, "missing value");
    const auto it = handlers().find(full);
    if (it == handlers().end()) throw ConfigError(line_no, full, "unknown key");
    if (!seen.insert(full).second) throw ConfigError(line_no, full, "duplicate key");
    it->second(Reader(entry), config, pending);
  }

  config.data.seed = pending.data_seed.value_or(config.seed);
  config.data.blob_classes = pending.blob_classes;
  if (pending.idx_fields != 0) {
    if (pending.idx_fields != 15) {
      throw ConfigError(line_no, "data", "IDX input needs train_images, train_labels, test_images and test_labels");
    }
    pending.idx.train_images = resolve(base_dir, pending.idx.train_images);
    pending.idx.train_labels = resolve(base_dir, pending.idx.train_labels);
    pending.idx.test_images = resolve(base_dir, pending.idx.test_images);
    pending.idx.test_labels = resolve(base_dir, pending.idx.test_labels);
    config.idx = pending.idx;
  }

  const std::size_t classes = config.idx ? config.idx->num_classes
                              : config.data.kind == DatasetKind::Blobs ? pending.blob_classes
                                                                       : 2;
  config.model.layer_widths = {2};
  config.model.layer_widths.insert(config.model.layer_widths.end(), pending.hidden.begin(), pending.hidden.end());
  config.model.layer_widths.push_back(classes);

  try {
    config.schedule.validate();
  } catch (const Error& e) {
    throw ConfigError(line_no, "schedule", e.what());
  }
  if (pending.swa) config.averagers.push_back(CollectionPolicy::swa(config.schedule));
  if (pending.fast_swa) {
    CollectionPolicy policy = CollectionPolicy::fast_swa(config.schedule, pending.stride_steps);
    if (pending.fast_swa_start) policy.start_epoch = *pending.fast_swa_start;
    config.averagers.push_back(policy);
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.parent_path());
}

void resolve_for_dataset(ExperimentConfig& config, const DatasetSplit& split) {
  config.model.layer_widths.front() = split.feature_dim;
  config.model.layer_widths.back() = split.num_classes;
  if (config.fast_swa_stride_epochs > 0) {
    const std::size_t spe = steps_per_epoch(config, split);
    for (auto& policy : config.averagers)
      if (policy.kind == AveragerKind::FastSwa) policy.stride_steps = config.fast_swa_stride_epochs * spe;
  }
}

}  // namespace fswa
