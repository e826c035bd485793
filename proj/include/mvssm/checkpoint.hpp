// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container, all integers and doubles little-endian:
//
//   magic        8 bytes  "RGSCKPT\0"
//   version      u32      kCheckpointVersion
//   config       u64 length + UTF-8 text (the run configuration, key = value lines)
//   step         u64      optimizer steps taken
//   count        u64      number of parameter records
//   per record:
//     name       u32 length + bytes
//     rank       u32, then rank x u64 dims
//     value      numel x f64
//     adam_step  u64
//     moments    u8 flag; if 1, numel x f64 first moment then numel x f64 second moment

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvssm/parameter.hpp"

namespace mvssm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParameterRecord {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::uint64_t adam_step = 0;
  std::vector<double> first_moment;  // empty when the parameter was never updated
  std::vector<double> second_moment;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<ParameterRecord> params;
};

Checkpoint capture(const ParameterStore& store, std::string config_text, std::uint64_t step);
// Copies values and optimizer state into `store`. Every stored parameter must exist
// with the same shape, and vice versa. Frozen flags are left as they are.
void restore(ParameterStore& store, const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvssm
