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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fswa/error.hpp"
#include "fswa/tensor.hpp"

namespace fswa {

enum class DatasetKind { TwoMoons, Blobs, Circles };

DatasetKind parse_dataset_kind(const std::string& name);
const char* dataset_kind_name(DatasetKind kind) noexcept;

struct DatasetSpec {
  DatasetKind kind = DatasetKind::TwoMoons;
  std::size_t n_total = 1000;  // labeled + unlabeled pool
  std::size_t n_labeled = 6;
  std::size_t n_test = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::size_t blob_classes = 3;  // BLOBS only
};

/// A labeled matrix of points.
struct LabeledSet {
  ad::Tensor x;
  std::vector<std::size_t> y;
  std::size_t rows() const { return y.size(); }
};

struct DatasetSplit {
  LabeledSet labeled;
  std::optional<ad::Tensor> unlabeled;  // empty when every training point is labeled
  LabeledSet test;
  std::size_t num_classes = 2;
  std::size_t feature_dim = 2;

  std::size_t unlabeled_rows() const { return unlabeled ? unlabeled->rows() : 0; }
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& message) : Error("dataset", message) {}
};

/// Generates a synthetic 2-D problem. The training pool (n_total points) and
/// the test set (n_test points) are drawn independently; n_labeled points
/// of the pool are labeled, stratified by class, and the rest are unlabeled.
DatasetSplit make_dataset(const DatasetSpec& spec);

/// Splits a training pool into a class-stratified labeled subset of
/// n_labeled points and an unlabeled remainder.
DatasetSplit split_pool(const LabeledSet& pool, LabeledSet test, std::size_t n_labeled, std::size_t num_classes,
                        std::uint64_t seed);

/// Selects rows of a matrix.
ad::Tensor gather_rows(const ad::Tensor& x, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------
// IDX files (big-endian): magic 0x00000803 images / 0x00000801 labels,
// followed by one uint32 per dimension and raw unsigned bytes.

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

enum class IdxErrorKind { Io, WrongMagic, Truncated, CountMismatch };

class IdxError : public Error {
 public:
  IdxError(IdxErrorKind kind, const std::string& message);
  IdxErrorKind error_kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

IdxImages read_idx_images(const std::filesystem::path& path);
IdxLabels read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const IdxLabels& labels);

/// Loads an image/label pair as a LabeledSet with pixels scaled to [0, 1].
LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace fswa
