// Copyright 2026 The MBAF Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary snapshot container for parameters and memory.
//
// Layout (all integers and floats little-endian):
//
//   8 bytes   magic "MBAFCKPT"
//   u32       format version (currently 1)
//   u32       block count
//   per block:
//     u32     name length, then that many UTF-8 bytes
//     u64     rows
//     u64     cols
//     f64     rows * cols values, row-major

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mbaf/fusion.hpp"

namespace mbaf {

inline constexpr char kCheckpointMagic[8] = {'M', 'B', 'A', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::string name;
  DenseMatrix values;
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

void write_checkpoint(std::ostream& out, const std::vector<CheckpointBlock>& blocks);
std::vector<CheckpointBlock> read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const std::vector<CheckpointBlock>& blocks);
std::vector<CheckpointBlock> load_checkpoint(const std::string& path);

// Flattened parameter blocks as 1 x n rows or their natural matrix shape.
std::vector<CheckpointBlock> snapshot(const MbafParams& params, const std::string& prefix = "");
void restore(MbafParams& params, const std::vector<CheckpointBlock>& blocks,
             const std::string& prefix = "");

// Memory is stored as "<prefix>memory" (slots x dim) plus a 1 x 1
// "<prefix>memory.writes_enabled" flag.
std::vector<CheckpointBlock> snapshot(const MemoryState& mem, const std::string& prefix = "");
MemoryState restore_memory(const std::vector<CheckpointBlock>& blocks,
                           const std::string& prefix = "");

const CheckpointBlock& find_block(const std::vector<CheckpointBlock>& blocks,
                                  const std::string& name);

}  // namespace mbaf
