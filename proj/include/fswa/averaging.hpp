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
#include <string>
#include <vector>

#include "fswa/error.hpp"
#include "fswa/nets.hpp"
#include "fswa/schedule.hpp"

namespace fswa {

enum class AveragerKind { Swa, FastSwa };

const char* averager_name(AveragerKind kind) noexcept;

/// When an averager collects the student weights.
///
/// SWA collects once per cycle, after the final optimizer step of each
/// cycle (the lowest learning rate of the replayed window); the first
/// collection is after the last step of epoch ell - 1.
///
/// FAST_SWA collects on a grid of optimizer steps anchored at the final step
/// of `start_epoch` and spaced `stride_steps` apart, restricted to epochs >=
/// start_epoch. With stride_steps = k * steps_per_epoch this is the end of
/// every k-th epoch from start_epoch on; with a stride that divides
/// steps_per_epoch it collects several times per epoch, always including
/// each epoch's last step.
struct CollectionPolicy {
  AveragerKind kind = AveragerKind::FastSwa;
  std::size_t stride_steps = 1;
  std::size_t start_epoch = 0;

  void validate() const;
  static CollectionPolicy swa(const ScheduleSpec& schedule);
  static CollectionPolicy fast_swa(const ScheduleSpec& schedule, std::size_t stride_steps);
};

bool should_collect(const CollectionPolicy& policy, std::size_t epoch, std::size_t step_in_epoch,
                    std::size_t steps_per_epoch, const ScheduleSpec& schedule);

struct AveragerState {
  ParamVector mean;
  std::size_t count = 0;
  CollectionPolicy policy;
};

/// Incremental mean: mean += (w - mean) / (count + 1).
AveragerState collect(const AveragerState& state, const ParamVector& w);

// ---------------------------------------------------------------------------
// Checkpoint files
//
//   bytes 0..7   magic "FSWA0001"
//   bytes 8..11  little-endian uint32 header length H
//   next H bytes UTF-8 JSON header
//   remainder    little-endian IEEE-754 doubles in ParamVector order

inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'W', 'A', '0', '0', '0', '1'};

struct CheckpointHeader {
  std::vector<std::size_t> widths;
  std::string activation = "relu";
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  double schedule_position = 0.0;
  std::string role = "student";  // student | teacher | swa | fast-swa
  std::size_t count = 0;         // collected checkpoints, averagers only
  std::size_t param_count = 0;

  friend bool operator==(const CheckpointHeader&, const CheckpointHeader&) = default;
};

struct Checkpoint {
  ParamVector params;
  CheckpointHeader header;
};

enum class CheckpointErrorKind { Io, BadMagic, TruncatedHeader, BadHeader, Truncated, LengthMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& message);
  CheckpointErrorKind error_kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

/// Writes params + header; header.param_count is filled in from params.
void save_checkpoint(const std::filesystem::path& path, const ParamVector& params, CheckpointHeader header);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params, CheckpointHeader header);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

MlpSpec spec_from_header(const CheckpointHeader& header);

/// The header as indented JSON, as stored in the file.
std::string header_json(const CheckpointHeader& header);

}  // namespace fswa
