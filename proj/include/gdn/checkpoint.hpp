#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdn/augment.hpp"
#include "gdn/model_zoo.hpp"

namespace gdn {

constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointMetadata {
  AugmentConfig augment;
  std::size_t epochs_completed = 0;
  double final_val_accuracy = 0.0;
};

struct LoadedCheckpoint {
  Model model;
  CheckpointMetadata metadata;
  std::string digest;  // SHA-256 of the file bytes
};

// Layout (all integers little-endian):
//   "GDN1"
//   u32 metadata length, metadata JSON
//     {format_version, family, spec, augment, metrics}
//   u32 parameter count, then per parameter:
//     u32 name length, name, u32 rank, u32 extents[rank],
//     float32 values[product(extents)]
std::vector<std::uint8_t> serialize_checkpoint(const Model& model,
                                               const CheckpointMetadata& meta);
LoadedCheckpoint deserialize_checkpoint(
    std::span<const std::uint8_t> bytes,
    std::optional<Family> expected_family = std::nullopt);

void save_checkpoint(const Model& model, const CheckpointMetadata& meta,
                     const std::filesystem::path& path);
// Throws FormatError naming the offending field on bad magic, version or
// family mismatch, truncation, unknown or missing parameter names.
LoadedCheckpoint load_checkpoint(
    const std::filesystem::path& path,
    std::optional<Family> expected_family = std::nullopt);

}  // namespace gdn
