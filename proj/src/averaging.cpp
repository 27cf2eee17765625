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

#include "fswa/averaging.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include "json.hpp"

namespace fswa {

const char* averager_name(AveragerKind kind) noexcept { return kind == AveragerKind::Swa ? "swa" : "fast-swa"; }

void CollectionPolicy::validate() const {
  if (stride_steps == 0) throw Error("invalid_config", "averager stride must be at least one step");
}

CollectionPolicy CollectionPolicy::swa(const ScheduleSpec& schedule) {
  const auto start = static_cast<std::size_t>(std::llround(std::max(0.0, schedule.ell - schedule.cycle_len)));
  return {AveragerKind::Swa, 1, start};
}

CollectionPolicy CollectionPolicy::fast_swa(const ScheduleSpec& schedule, std::size_t stride_steps) {
  const auto start = static_cast<std::size_t>(std::llround(std::max(0.0, schedule.ell - schedule.cycle_len)));
  return {AveragerKind::FastSwa, stride_steps, start};
}

bool should_collect(const CollectionPolicy& policy, std::size_t epoch, std::size_t step_in_epoch,
                    std::size_t steps_per_epoch, const ScheduleSpec& schedule) {
  if (steps_per_epoch == 0 || step_in_epoch >= steps_per_epoch || epoch < policy.start_epoch) return false;

  if (policy.kind == AveragerKind::Swa) {
    const long long ell = std::llround(schedule.ell);
    const long long cycle = std::max(1LL, std::llround(schedule.cycle_len));
    const long long ends_at = static_cast<long long>(epoch) + 1;
    return step_in_epoch + 1 == steps_per_epoch && ends_at >= ell && (ends_at - ell) % cycle == 0;
  }

  const long long stride = static_cast<long long>(std::max<std::size_t>(policy.stride_steps, 1));
  const long long spe = static_cast<long long>(steps_per_epoch);
  const long long anchor = static_cast<long long>(policy.start_epoch) * spe + spe - 1;
  const long long global = static_cast<long long>(epoch) * spe + static_cast<long long>(step_in_epoch);
  return ((global - anchor) % stride + stride) % stride == 0;
}

AveragerState collect(const AveragerState& state, const ParamVector& w) {
  AveragerState next = state;
  if (state.count == 0) {
    next.mean = w;
    next.count = 1;
    return next;
  }
  require_same_length(state.mean, w, "collect");
  const double denom = static_cast<double>(state.count + 1);
  std::vector<double> mean(state.mean.values().begin(), state.mean.values().end());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (w[i] - mean[i]) / denom;
  next.mean = ParamVector(std::move(mean));
  next.count = state.count + 1;
  return next;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

const char* kind_token(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::Io: return "io";
    case CheckpointErrorKind::BadMagic: return "bad_magic";
    case CheckpointErrorKind::TruncatedHeader: return "truncated_header";
    case CheckpointErrorKind::BadHeader: return "bad_header";
    case CheckpointErrorKind::Truncated: return "truncated";
    case CheckpointErrorKind::LengthMismatch: return "length_mismatch";
  }
  return "checkpoint";
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

nlohmann::json header_to_json(const CheckpointHeader& h) {
  return {{"widths", h.widths},
          {"activation", h.activation},
          {"epoch", h.epoch},
          {"step", h.step},
          {"seed", h.seed},
          {"schedule_position", h.schedule_position},
          {"role", h.role},
          {"count", h.count},
          {"param_count", h.param_count}};
}

CheckpointHeader header_from_json(const nlohmann::json& j) {
  CheckpointHeader h;
  h.widths = j.at("widths").get<std::vector<std::size_t>>();
  h.activation = j.value("activation", std::string("relu"));
  h.epoch = j.at("epoch").get<std::size_t>();
  h.step = j.at("step").get<std::size_t>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.schedule_position = j.at("schedule_position").get<double>();
  h.role = j.at("role").get<std::string>();
  h.count = j.value("count", std::size_t{0});
  h.param_count = j.at("param_count").get<std::size_t>();
  return h;
}

}  // namespace

CheckpointError::CheckpointError(CheckpointErrorKind kind, const std::string& message)
    : Error(kind_token(kind), message), kind_(kind) {}

std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params, CheckpointHeader header) {
  header.param_count = params.size();
  const std::string json = header_to_json(header).dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  out.reserve(out.size() + 8 * params.size());
  for (double v : params.values()) put_f64(out, v);
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(CheckpointErrorKind::BadMagic, "bad magic: not an FSWA0001 checkpoint");
  }
  if (bytes.size() < 12) throw CheckpointError(CheckpointErrorKind::TruncatedHeader, "file ends inside the header length");
  const auto header_len = static_cast<std::size_t>(get_le(bytes.subspan(8), 4));
  if (bytes.size() < 12 + header_len) {
    throw CheckpointError(CheckpointErrorKind::TruncatedHeader,
                          fmt::format("header claims {} bytes, only {} available", header_len, bytes.size() - 12));
  }
  CheckpointHeader header;
  try {
    const auto* begin = reinterpret_cast<const char*>(bytes.data() + 12);
    header = header_from_json(nlohmann::json::parse(begin, begin + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::BadHeader, std::string("malformed header: ") + e.what());
  }

  const auto payload = bytes.subspan(12 + header_len);
  const std::size_t expected = header.param_count * 8;
  if (payload.size() < expected) {
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          fmt::format("truncated payload: header claims {} values, file holds {} bytes",
                                      header.param_count, payload.size()));
  }
  if (payload.size() != expected) {
    throw CheckpointError(CheckpointErrorKind::LengthMismatch,
                          fmt::format("payload has {} bytes, header claims {} values", payload.size(),
                                      header.param_count));
  }
  if (!header.widths.empty() && spec_from_header(header).param_count() != header.param_count) {
    throw CheckpointError(CheckpointErrorKind::LengthMismatch, "layer widths disagree with param_count");
  }
  std::vector<double> values(header.param_count);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<double>(get_le(payload.subspan(8 * i), 8));
  return {ParamVector(std::move(values)), std::move(header)};
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params, CheckpointHeader header) {
  const auto bytes = encode_checkpoint(params, std::move(header));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

MlpSpec spec_from_header(const CheckpointHeader& header) {
  MlpSpec spec;
  spec.layer_widths = header.widths;
  spec.hidden_activation = header.activation == "softplus" ? Activation::Softplus : Activation::Relu;
  return spec;
}

std::string header_json(const CheckpointHeader& header) { return header_to_json(header).dump(2); }

}  // namespace fswa
