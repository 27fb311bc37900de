#pragma once

#include <map>

#include "pseg/model.hpp"

namespace pseg {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes <prefix>.json (manifest: version, step, config echo, tensor records
/// with byte offsets and trainable flags) and <prefix>.bin (little-endian f64
/// values, tensors back to back in manifest order).
void save_checkpoint(Model& model, const std::string& prefix, std::uint64_t step,
                     const std::map<std::string, std::string>& config_echo);

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::map<std::string, std::string> config;
};

/// Loads weights into an already assembled model; names and shapes must match
/// the manifest exactly.
CheckpointMeta load_checkpoint(Model& model, const std::string& prefix);

/// Reads the manifest's config echo without touching weights.
CheckpointMeta read_checkpoint_meta(const std::string& prefix);

}  // namespace pseg
