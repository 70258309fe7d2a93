#pragma once

#include <cstdint>
#include <filesystem>

#include "ci4gi/model.hpp"

namespace ci4gi {

struct Checkpoint {
  ModelParams params;
  std::uint64_t config_hash = 0;
  std::size_t epoch = 0;
};

/// Binary layout: "CI4GICKP", format version byte, config hash, epoch, the
/// five dims, tensor count, then per tensor name, rank, shape and
/// little-endian float64 data. Integers are little-endian uint64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ci4gi
