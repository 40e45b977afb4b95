#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gdn/tensor.hpp"

namespace gdn {

// 8-bit RGB, interleaved, row-major.
struct Rgb8Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Signature sniffing only.
bool is_png_or_jpeg(std::span<const std::uint8_t> bytes);

// PNG or JPEG. Throws DataError on anything that does not decode.
Rgb8Image decode_image(std::span<const std::uint8_t> bytes);
Rgb8Image read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Rgb8Image& image);
void write_png(const std::filesystem::path& path, const Rgb8Image& image);

// [3,H,W] with values v / 255.
Tensor to_tensor(const Rgb8Image& image);
// Inverse of to_tensor with clamping and rounding.
Rgb8Image from_tensor(const Tensor& chw);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
// Digest of the decoded pixels (dimensions included), independent of the
// file encoding.
std::string pixel_digest(const Rgb8Image& image);

// Bilinear resize with corner-aligned sampling: output pixel (y, x) samples
// the source at (y * (H-1) / (H'-1), x * (W-1) / (W'-1)). A single-pixel
// output axis samples the source center.
Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w);

}  // namespace gdn
