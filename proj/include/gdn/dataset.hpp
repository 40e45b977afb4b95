#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gdn/tensor.hpp"

namespace gdn {

struct LabeledImage {
  Tensor pixels;            // [3,H,W], values in [0,1]
  std::size_t label = 0;
  std::string source_id;    // "<class_dir>/<file name>"
  std::string content_hash; // SHA-256 of the decoded pixels
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> images;  // sorted by source_id
  std::size_t files_seen = 0;
  std::size_t duplicates_removed = 0;
  std::vector<std::string> warnings;
};

// Reads root/<class>/<image>.{png,jpg,jpeg}. Classes are the sorted
// subdirectory names. Undecodable files are skipped with a warning; a class
// left without usable images is an error. Duplicates by pixel digest are
// removed, keeping the smallest source_id.
Dataset load_dataset(const std::filesystem::path& root);

// Keeps the lexicographically smallest source_id of every content_hash.
// Returns the survivors sorted by source_id.
std::vector<LabeledImage> deduplicate(std::vector<LabeledImage> images,
                                      std::size_t* removed = nullptr);

enum class SplitPart { Train, Val };

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::uint64_t seed = 0;
};

// Stratified: every class is shuffled with its own derived stream and cut at
// round(ratio * n), clamped so both parts keep at least one image.
DatasetSplit split_train_val(std::span<const LabeledImage> images,
                             double ratio, std::uint64_t seed);

struct SplitEntry {
  std::string source_id;
  std::size_t label;
  SplitPart part;
};

// One "source_id<TAB>label<TAB>{train|val}" line per image. Lines starting
// with '#' carry metadata (dataset root, class names, seed).
struct SplitManifest {
  std::filesystem::path dataset_root;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::vector<SplitEntry> entries;
};

SplitManifest make_split_manifest(const DatasetSplit& split,
                                  const std::filesystem::path& root,
                                  std::vector<std::string> class_names);
void write_split_manifest(const std::filesystem::path& path,
                          const SplitManifest& manifest);
SplitManifest read_split_manifest(const std::filesystem::path& path);

// Rebuilds a split from loaded images; every manifest entry must resolve to an
// image with the same label.
DatasetSplit apply_split_manifest(std::span<const LabeledImage> images,
                                  const SplitManifest& manifest);

}  // namespace gdn
