#include "gdn/fixture.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "gdn/classes.hpp"
#include "gdn/error.hpp"
#include "gdn/random.hpp"

namespace gdn {
namespace {

constexpr std::array<std::array<double, 3>, 6> kBaseColors{{
    {0.85, 0.55, 0.45},
    {0.90, 0.80, 0.60},
    {0.55, 0.35, 0.25},
    {0.20, 0.12, 0.10},
    {0.60, 0.50, 0.30},
    {0.75, 0.15, 0.25},
}};

double pattern(std::size_t cls, double u, double v, double freq, double phase) {
  const double pi = 3.14159265358979323846;
  switch (cls) {
    case 0: return std::sin(2 * pi * (freq * u + phase));
    case 1: return std::sin(2 * pi * (freq * v + phase));
    case 2: return std::sin(2 * pi * freq * u + phase) * std::sin(2 * pi * freq * v);
    case 3: {
      const double r = std::hypot(u - 0.5, v - 0.5);
      return std::cos(2 * pi * (freq * r + phase));
    }
    case 4: return std::sin(2 * pi * (freq * (u + v) / 2 + phase));
    default: {
      const double d = std::hypot(u - 0.5, v - 0.5);
      return d < 0.25 + 0.1 * phase ? 1.0 : -1.0;
    }
  }
}

}  // namespace

Rgb8Image texture_image(std::size_t cls, std::size_t side, Rng& rng) {
  if (cls >= kBaseColors.size()) throw UsageError("fixture class out of range");
  const double freq = 3.0 + 2.0 * uniform01(rng);
  const double phase = uniform01(rng);
  std::array<double, 3> color = kBaseColors[cls];
  for (double& c : color) c = std::clamp(c + 0.06 * (uniform01(rng) - 0.5), 0.0, 1.0);
  Rgb8Image img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(side);
      const double v = static_cast<double>(y) / static_cast<double>(side);
      const double p = pattern(cls, u, v, freq, phase);
      const double grain = 0.04 * (uniform01(rng) - 0.5);
      for (std::size_t c = 0; c < 3; ++c) {
        const double value = std::clamp(color[c] * (1.0 + 0.25 * p) + grain, 0.0, 1.0);
        img.pixels[(y * side + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(255.0 * value));
      }
    }
  }
  return img;
}

std::size_t write_texture_fixture(const std::filesystem::path& root,
                                  const FixtureConfig& cfg) {
  std::size_t written = 0;
  for (std::size_t cls = 0; cls < kLesionClasses.size(); ++cls) {
    const auto dir = root / std::string(kLesionClasses[cls].id);
    std::filesystem::create_directories(dir);
    Rng rng(derive_seed(cfg.seed, cls));
    for (std::size_t i = 0; i < cfg.images_per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%03zu.png", i);
      const auto img = texture_image(cls, cfg.side, rng);
      write_png(dir / name, img);
      ++written;
      if (cls == 0 && i < cfg.duplicates) {
        std::snprintf(name, sizeof(name), "dup_%03zu.png", i);
        write_png(dir / name, img);
        ++written;
      }
    }
  }
  return written;
}

}  // namespace gdn
