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

#include "mbaf/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mbaf {
namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw CheckpointError("checkpoint: truncated stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

CheckpointBlock as_row(const std::string& name, std::span<const double> v) {
  DenseMatrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.data());
  return {name, std::move(m)};
}

void copy_into(std::span<double> dst, const CheckpointBlock& b) {
  if (b.values.size() != dst.size()) {
    throw CheckpointError("checkpoint: block '" + b.name + "' has " +
                          std::to_string(b.values.size()) + " values, expected " +
                          std::to_string(dst.size()));
  }
  std::copy(b.values.data(), b.values.data() + b.values.size(), dst.begin());
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<CheckpointBlock>& blocks) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_le<std::uint64_t>(out, b.values.rows());
    put_le<std::uint64_t>(out, b.values.cols());
    for (double v : b.values.span()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("checkpoint: write failed");
}

std::vector<CheckpointBlock> read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<CheckpointBlock> blocks;
  blocks.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    b.name.resize(get_le<std::uint32_t>(in));
    if (!in.read(b.name.data(), static_cast<std::streamsize>(b.name.size()))) {
      throw CheckpointError("checkpoint: truncated block name");
    }
    const auto rows = get_le<std::uint64_t>(in);
    const auto cols = get_le<std::uint64_t>(in);
    b.values = DenseMatrix(rows, cols);
    for (double& v : b.values.span()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    blocks.push_back(std::move(b));
  }
  return blocks;
}

void save_checkpoint(const std::string& path, const std::vector<CheckpointBlock>& blocks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  write_checkpoint(out, blocks);
}

std::vector<CheckpointBlock> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  return read_checkpoint(in);
}

const CheckpointBlock& find_block(const std::vector<CheckpointBlock>& blocks,
                                  const std::string& name) {
  auto it = std::find_if(blocks.begin(), blocks.end(),
                         [&](const CheckpointBlock& b) { return b.name == name; });
  if (it == blocks.end()) throw CheckpointError("checkpoint: missing block '" + name + "'");
  return *it;
}

std::vector<CheckpointBlock> snapshot(const MbafParams& params, const std::string& prefix) {
  return {{prefix + "w_read", params.w_read},
          as_row(prefix + "b_read", params.b_read),
          {prefix + "w_compose", params.w_compose},
          as_row(prefix + "b_compose", params.b_compose),
          as_row(prefix + "w_scale", params.w_scale)};
}

void restore(MbafParams& params, const std::vector<CheckpointBlock>& blocks,
             const std::string& prefix) {
  copy_into(params.w_read.span(), find_block(blocks, prefix + "w_read"));
  copy_into(params.b_read.span(), find_block(blocks, prefix + "b_read"));
  copy_into(params.w_compose.span(), find_block(blocks, prefix + "w_compose"));
  copy_into(params.b_compose.span(), find_block(blocks, prefix + "b_compose"));
  copy_into(params.w_scale.span(), find_block(blocks, prefix + "w_scale"));
}

std::vector<CheckpointBlock> snapshot(const MemoryState& mem, const std::string& prefix) {
  DenseMatrix flag(1, 1, mem.writes_enabled ? 1.0 : 0.0);
  return {{prefix + "memory", mem.M}, {prefix + "memory.writes_enabled", flag}};
}

MemoryState restore_memory(const std::vector<CheckpointBlock>& blocks,
                           const std::string& prefix) {
  const auto& m = find_block(blocks, prefix + "memory");
  MemoryState mem;
  mem.M = m.values;
  mem.slots = m.values.rows();
  mem.dim = m.values.cols();
  mem.writes_enabled = find_block(blocks, prefix + "memory.writes_enabled").values(0, 0) != 0.0;
  return mem;
}

}  // namespace mbaf
