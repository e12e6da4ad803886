#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cyclenet/network.hpp"

namespace cyclenet {

// Checkpoint container: magic "CYCK", little-endian u32 version, length-
// prefixed UTF-8 network spec text, then per-parameter records (length-
// prefixed name, u32 rank, u32 extents, raw little-endian 64-bit floats).
// Optimizer moments and loop state ride as records with reserved "__opt." /
// "__meta." name prefixes.

constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const std::vector<std::pair<std::string, Tensor>>& records);

struct LoadedCheckpoint {
  NetworkSpec spec;
  std::string spec_text;
  std::vector<std::pair<std::string, Tensor>> records;

  const Tensor* find(const std::string& name) const;
  double scalar_or(const std::string& name, double fallback) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Build the network the checkpoint describes and load every parameter and
// BatchNorm buffer. Missing or shape-mismatched records are errors.
Network network_from_checkpoint(const LoadedCheckpoint& ckpt);

}  // namespace cyclenet
