#pragma once

#include <cstdint>
#include <filesystem>

#include "gdn/image.hpp"
#include "gdn/random.hpp"

namespace gdn {

struct FixtureConfig {
  std::size_t images_per_class = 60;
  std::size_t side = 40;
  std::uint64_t seed = 7;
  // Extra byte-identical copies written into the first class.
  std::size_t duplicates = 0;
};

// Colored texture for one class: a class-specific base color and pattern
// (stripes, checkerboard, rings, ...) with per-image phase, frequency and
// color jitter drawn from `rng`.
Rgb8Image texture_image(std::size_t cls, std::size_t side, Rng& rng);

// Writes a 6-class PNG dataset under root/<class id>/NNN.png. Returns the
// number of files written.
std::size_t write_texture_fixture(const std::filesystem::path& root,
                                  const FixtureConfig& cfg);

}  // namespace gdn
