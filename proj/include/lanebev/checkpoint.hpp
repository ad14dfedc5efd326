#pragma once

// Binary checkpoint container:
//   "LBVC" | u32 version | str model config text | u32 tensor count |
//   per tensor: str name | u32 rank | u32 dims[rank] | f64 values
// All integers and floats little-endian; str is u32 length + bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "lanebev/network.hpp"

namespace lanebev {

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelConfig model;
  std::vector<NamedTensor> tensors;
};

void save_checkpoint(const Network& net, const std::filesystem::path& path);
/// Throws MissingCheckpoint when the file does not exist, FormatError on a
/// malformed file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every tensor into `net`. Throws DimensionMismatch when the stored
/// model shape or any tensor name or shape differs from the network's.
void load_into(Network& net, const Checkpoint& ckpt);
void load_into(Network& net, const std::filesystem::path& path);

/// Builds a network from the checkpoint's own model config.
Network load_network(const std::filesystem::path& path);

}  // namespace lanebev
