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

#include "fswa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <fmt/format.h>

#include "fswa/rng.hpp"

namespace fswa {

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "two_moons" || name == "moons") return DatasetKind::TwoMoons;
  if (name == "blobs") return DatasetKind::Blobs;
  if (name == "circles") return DatasetKind::Circles;
  throw DatasetError("unknown dataset kind '" + name + "'");
}

const char* dataset_kind_name(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::TwoMoons: return "two_moons";
    case DatasetKind::Blobs: return "blobs";
    case DatasetKind::Circles: return "circles";
  }
  return "?";
}

namespace {

std::size_t class_count(const DatasetSpec& spec) { return spec.kind == DatasetKind::Blobs ? spec.blob_classes : 2; }

// Point `index` of class `label` out of `per_class` points, before noise.
std::pair<double, double> clean_point(DatasetKind kind, std::size_t label, std::size_t index, std::size_t per_class,
                                      std::size_t classes, CounterRng& rng) {
  const double frac = per_class > 1 ? static_cast<double>(index) / static_cast<double>(per_class - 1) : 0.5;
  switch (kind) {
    case DatasetKind::TwoMoons: {
      const double t = std::numbers::pi * frac;
      if (label == 0) return {std::cos(t), std::sin(t)};
      return {1.0 - std::cos(t), 0.5 - std::sin(t)};
    }
    case DatasetKind::Circles: {
      const double t = 2.0 * std::numbers::pi * frac;
      const double r = label == 0 ? 1.0 : 0.5;
      return {r * std::cos(t), r * std::sin(t)};
    }
    case DatasetKind::Blobs: {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes);
      return {3.0 * std::cos(angle) + rng.normal(), 3.0 * std::sin(angle) + rng.normal()};
    }
  }
  return {0.0, 0.0};
}

LabeledSet sample_points(const DatasetSpec& spec, std::size_t n, std::uint64_t index) {
  const std::size_t classes = class_count(spec);
  CounterRng rng(spec.seed, Stream::Data, index);
  std::vector<double> x;
  std::vector<std::size_t> y;
  x.reserve(2 * n);
  for (std::size_t label = 0; label < classes; ++label) {
    const std::size_t per_class = n / classes + (label < n % classes ? 1 : 0);
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto [px, py] = clean_point(spec.kind, label, i, per_class, classes, rng);
      x.push_back(px + spec.noise * rng.normal());
      x.push_back(py + spec.noise * rng.normal());
      y.push_back(label);
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  LabeledSet set{ad::Tensor::matrix(n, 2, std::vector<double>(2 * n)), {}};
  std::vector<double> shuffled(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    shuffled[2 * i] = x[2 * order[i]];
    shuffled[2 * i + 1] = x[2 * order[i] + 1];
    set.y.push_back(y[order[i]]);
  }
  set.x = ad::Tensor::matrix(n, 2, std::move(shuffled));
  return set;
}

}  // namespace

ad::Tensor gather_rows(const ad::Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t cols = x.cols();
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    const auto row = x.values().subspan(r * cols, cols);
    out.insert(out.end(), row.begin(), row.end());
  }
  return ad::Tensor::matrix(rows.size(), cols, std::move(out));
}

DatasetSplit make_dataset(const DatasetSpec& spec) {
  const std::size_t classes = class_count(spec);
  if (classes < 2) throw DatasetError("a dataset needs at least 2 classes");
  if (spec.n_labeled > spec.n_total) throw DatasetError("n_labeled exceeds n_total");
  if (spec.n_labeled < classes) {
    throw DatasetError(fmt::format("n_labeled={} leaves a class without labels ({} classes)", spec.n_labeled, classes));
  }
  if (spec.n_test == 0) throw DatasetError("n_test must be positive");
  if (!(spec.noise >= 0.0)) throw DatasetError("noise must be >= 0");

  return split_pool(sample_points(spec, spec.n_total, 0), sample_points(spec, spec.n_test, 1), spec.n_labeled,
                    classes, spec.seed);
}

DatasetSplit split_pool(const LabeledSet& pool, LabeledSet test, std::size_t n_labeled, std::size_t num_classes,
                        std::uint64_t seed) {
  if (n_labeled > pool.rows()) throw DatasetError("n_labeled exceeds the training pool");
  if (n_labeled < num_classes) {
    throw DatasetError(fmt::format("n_labeled={} leaves a class without labels ({} classes)", n_labeled, num_classes));
  }
  for (std::size_t label : pool.y) {
    if (label >= num_classes) throw DatasetError(fmt::format("label {} outside [0, {})", label, num_classes));
  }
  DatasetSplit split;
  split.test = std::move(test);
  split.num_classes = num_classes;
  split.feature_dim = pool.x.cols();

  std::vector<std::size_t> order(pool.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(seed, Stream::Split);
  shuffle(order, rng);

  // Stratified labeled subset: the first members of each class in a random
  // order are labeled, the remainder is unlabeled.
  std::vector<std::size_t> quota(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) quota[c] = n_labeled / num_classes + (c < n_labeled % num_classes ? 1 : 0);
  std::vector<std::size_t> labeled_rows;
  std::vector<std::size_t> unlabeled_rows;
  for (std::size_t i : order) {
    auto& q = quota[pool.y[i]];
    if (q > 0) {
      --q;
      labeled_rows.push_back(i);
    } else {
      unlabeled_rows.push_back(i);
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (quota[c] != 0) throw DatasetError(fmt::format("class {} has too few points for its labeled quota", c));
  }

  split.labeled.x = gather_rows(pool.x, labeled_rows);
  for (std::size_t r : labeled_rows) split.labeled.y.push_back(pool.y[r]);
  if (!unlabeled_rows.empty()) split.unlabeled = gather_rows(pool.x, unlabeled_rows);
  return split;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

const char* idx_token(IdxErrorKind kind) {
  switch (kind) {
    case IdxErrorKind::Io: return "io";
    case IdxErrorKind::WrongMagic: return "wrong_magic";
    case IdxErrorKind::Truncated: return "truncated";
    case IdxErrorKind::CountMismatch: return "count_mismatch";
  }
  return "idx";
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw IdxError(IdxErrorKind::Truncated, path.string() + ": header is truncated");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxError(IdxErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

IdxError::IdxError(IdxErrorKind kind, const std::string& message) : Error(idx_token(kind), message), kind_(kind) {}

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kImageMagic) {
    throw IdxError(IdxErrorKind::WrongMagic, fmt::format("{}: magic {:#010x} is not an IDX image file", path.string(), magic));
  }
  IdxImages images;
  images.count = read_be32(bytes, 4, path);
  images.rows = read_be32(bytes, 8, path);
  images.cols = read_be32(bytes, 12, path);
  const std::size_t expected = images.count * images.rows * images.cols;
  if (bytes.size() - 16 != expected) {
    throw IdxError(IdxErrorKind::Truncated,
                   fmt::format("{}: expected {} pixel bytes, found {}", path.string(), expected, bytes.size() - 16));
  }
  images.pixels.assign(bytes.begin() + 16, bytes.end());
  return images;
}

IdxLabels read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kLabelMagic) {
    throw IdxError(IdxErrorKind::WrongMagic, fmt::format("{}: magic {:#010x} is not an IDX label file", path.string(), magic));
  }
  const std::size_t count = read_be32(bytes, 4, path);
  if (bytes.size() - 8 != count) {
    throw IdxError(IdxErrorKind::Truncated,
                   fmt::format("{}: expected {} label bytes, found {}", path.string(), count, bytes.size() - 8));
  }
  return {std::vector<std::uint8_t>(bytes.begin() + 8, bytes.end())};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::vector<std::uint8_t> out;
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  write_all(path, out);
}

void write_idx_labels(const std::filesystem::path& path, const IdxLabels& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.labels.size()));
  out.insert(out.end(), labels.labels.begin(), labels.labels.end());
  write_all(path, out);
}

LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const IdxImages images = read_idx_images(images_path);
  const IdxLabels labels = read_idx_labels(labels_path);
  if (images.count != labels.labels.size()) {
    throw IdxError(IdxErrorKind::CountMismatch,
                   fmt::format("{} images but {} labels", images.count, labels.labels.size()));
  }
  if (images.count == 0 || images.rows * images.cols == 0) throw IdxError(IdxErrorKind::Truncated, "IDX file holds no pixels");
  std::vector<double> x(images.pixels.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(images.pixels[i]) / 255.0;
  LabeledSet set{ad::Tensor::matrix(images.count, images.rows * images.cols, std::move(x)), {}};
  set.y.assign(labels.labels.begin(), labels.labels.end());
  return set;
}

}  // namespace fswa
