#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdn/dataset.hpp"
#include "gdn/random.hpp"
#include "gdn/tensor.hpp"

namespace gdn {

struct AugmentConfig {
  std::size_t resize_to = 256;
  std::size_t crop_to = 224;
  double hflip_prob = 0.5;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  // resize_to = crop_to + ceil(crop_to / 7) (256 for a 224 crop), everything
  // else default.
  static AugmentConfig for_crop(std::size_t crop_to);
  // Throws UsageError when crop_to > resize_to, std <= 0 or hflip_prob is
  // outside [0, 1].
  void validate() const;
};

nlohmann::json augment_to_json(const AugmentConfig& cfg);
AugmentConfig augment_from_json(const nlohmann::json& j);

Tensor crop(const Tensor& chw, std::size_t top, std::size_t left,
            std::size_t size);
Tensor hflip(const Tensor& chw);
// Per-channel (x - mean) / std, in place.
void normalize(Tensor& chw, const AugmentConfig& cfg);

// Train: resize, uniformly random crop, flip with hflip_prob, normalize.
// Eval: resize, center crop, normalize. Eval never touches the generator.
Tensor augment(const Tensor& pixels, const AugmentConfig& cfg, Mode mode,
               Rng& rng);

struct Batch {
  Tensor images;                    // [B,3,S,S]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices; // positions in the input list
};

// Sample order for one epoch: a permutation of 0..n-1 seeded by epoch_seed.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t epoch_seed);

// Shuffles with epoch_seed and cuts consecutive batches (the last one may be
// partial). Sample i is augmented with its own stream
// derive_seed(epoch_seed, i), so results do not depend on batch layout.
std::vector<Batch> make_batches(std::span<const LabeledImage> samples,
                                const AugmentConfig& cfg, Mode mode,
                                std::size_t batch_size,
                                std::uint64_t epoch_seed);

// Sample b of a [B,3,S,S] batch as [3,S,S].
Tensor batch_item(const Tensor& batch, std::size_t b);

}  // namespace gdn
