#include "gdn/augment.hpp"

#include <algorithm>
#include <numeric>

#include "gdn/error.hpp"
#include "gdn/image.hpp"

namespace gdn {

AugmentConfig AugmentConfig::for_crop(std::size_t crop_to) {
  AugmentConfig cfg;
  cfg.crop_to = crop_to;
  cfg.resize_to = crop_to + (crop_to + 6) / 7;
  return cfg;
}

void AugmentConfig::validate() const {
  if (crop_to == 0 || crop_to > resize_to) {
    throw UsageError("augment: crop_to must lie in [1, resize_to]");
  }
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
    throw UsageError("augment: hflip_prob must lie in [0, 1]");
  }
  for (double s : std) {
    if (!(s > 0.0)) throw UsageError("augment: std components must be > 0");
  }
}

nlohmann::json augment_to_json(const AugmentConfig& cfg) {
  return {{"resize_to", cfg.resize_to},
          {"crop_to", cfg.crop_to},
          {"hflip_prob", cfg.hflip_prob},
          {"mean", cfg.mean},
          {"std", cfg.std}};
}

AugmentConfig augment_from_json(const nlohmann::json& j) {
  try {
    AugmentConfig cfg;
    cfg.resize_to = j.at("resize_to").get<std::size_t>();
    cfg.crop_to = j.at("crop_to").get<std::size_t>();
    cfg.hflip_prob = j.at("hflip_prob").get<double>();
    cfg.mean = j.at("mean").get<std::array<double, 3>>();
    cfg.std = j.at("std").get<std::array<double, 3>>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("augment config: ") + e.what());
  }
}

Tensor crop(const Tensor& chw, std::size_t top, std::size_t left,
            std::size_t size) {
  if (chw.rank() != 3 || top + size > chw.dim(1) || left + size > chw.dim(2)) {
    throw ShapeError("crop window outside image " + shape_string(chw.shape()));
  }
  Tensor out({chw.dim(0), size, size});
  for (std::size_t c = 0; c < chw.dim(0); ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        out.at(c, y, x) = chw.at(c, top + y, left + x);
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("hflip expects [C,H,W]");
  Tensor out(chw.shape());
  const std::size_t w = chw.dim(2);
  for (std::size_t c = 0; c < chw.dim(0); ++c) {
    for (std::size_t y = 0; y < chw.dim(1); ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.at(c, y, x) = chw.at(c, y, w - 1 - x);
      }
    }
  }
  return out;
}

void normalize(Tensor& chw, const AugmentConfig& cfg) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw ShapeError("normalize expects [3,H,W]");
  }
  const std::size_t plane = chw.dim(1) * chw.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    double* p = chw.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      p[i] = (p[i] - cfg.mean[c]) / cfg.std[c];
    }
  }
}

Tensor augment(const Tensor& pixels, const AugmentConfig& cfg, Mode mode,
               Rng& rng) {
  cfg.validate();
  const Tensor resized = resize_bilinear(pixels, cfg.resize_to, cfg.resize_to);
  const std::size_t slack = cfg.resize_to - cfg.crop_to;
  Tensor out;
  if (mode == Mode::Train) {
    const auto top = static_cast<std::size_t>(uniform_index(rng, slack + 1));
    const auto left = static_cast<std::size_t>(uniform_index(rng, slack + 1));
    out = crop(resized, top, left, cfg.crop_to);
    if (uniform01(rng) < cfg.hflip_prob) out = hflip(out);
  } else {
    out = crop(resized, slack / 2, slack / 2, cfg.crop_to);
  }
  normalize(out, cfg);
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t epoch_seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(epoch_seed);
  shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<Batch> make_batches(std::span<const LabeledImage> samples,
                                const AugmentConfig& cfg, Mode mode,
                                std::size_t batch_size,
                                std::uint64_t epoch_seed) {
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  std::vector<Batch> batches;
  if (samples.empty()) return batches;
  const auto order = epoch_order(samples.size(), epoch_seed);
  const std::size_t s = cfg.crop_to;
  const std::size_t item = 3 * s * s;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    Batch batch{Tensor({b, 3, s, s}), {}, {}};
    for (std::size_t k = 0; k < b; ++k) {
      const std::size_t i = order[start + k];
      Rng rng(derive_seed(epoch_seed, i));
      const Tensor x = augment(samples[i].pixels, cfg, mode, rng);
      std::copy(x.data(), x.data() + item, batch.images.data() + k * item);
      batch.labels.push_back(samples[i].label);
      batch.indices.push_back(i);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

Tensor batch_item(const Tensor& batch, std::size_t b) {
  if (batch.rank() != 4 || b >= batch.dim(0)) {
    throw ShapeError("batch_item: index out of range");
  }
  const std::size_t item = batch.dim(1) * batch.dim(2) * batch.dim(3);
  std::vector<double> values(batch.data() + b * item,
                             batch.data() + (b + 1) * item);
  return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(values));
}

}  // namespace gdn
