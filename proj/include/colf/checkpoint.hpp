#pragma once

#include <map>
#include <string>
#include <vector>

#include "colf/tensor.hpp"

namespace colf {

// Named f64 grids in a single binary container. Layout, all little-endian:
//   magic "COLF" | u32 version | u64 entry count | entries...
//   entry: u32 name length | name bytes | u32 rank | u64 extents[rank] | f64 payload
// Round-trips are bit-exact.
struct CheckpointEntry {
  Shape shape;
  std::vector<double> data;
};

using CheckpointMap = std::map<std::string, CheckpointEntry>;

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const CheckpointMap& entries);
CheckpointMap read_checkpoint(const std::string& path);

// Copies store parameters into/out of a checkpoint map under their names.
void store_to_checkpoint(const ParamStore& store, CheckpointMap& out);
// Throws if a parameter is missing or its extents disagree (e.g. a model
// built with a different feature width).
void checkpoint_to_store(const CheckpointMap& in, ParamStore& store);

}  // namespace colf
