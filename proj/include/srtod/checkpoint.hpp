#pragma once

#include <cstdint>
#include <filesystem>

#include "srtod/params.hpp"

namespace srtod {

/// Versioned binary checkpoint: every named parameter with its momentum
/// buffer, the optimizer step counter, and the config hash. Raw float bits
/// are stored, so save -> load -> save is byte-stable.
void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore<float>& store, uint64_t config_hash,
                     int64_t step);

/// Loads into an existing store (shapes must match). Returns the stored
/// step counter; sets *hash_mismatch when the config hash differs.
int64_t load_checkpoint(const std::filesystem::path& path,
                        ParamStore<float>& store, uint64_t config_hash,
                        bool* hash_mismatch = nullptr);

}  // namespace srtod
