#include "gdn/image.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gdn/error.hpp"

namespace gdn {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png_or_jpeg(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= sizeof(kPng) &&
      std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return true;
  }
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 &&
         bytes[2] == 0xFF;
}

Rgb8Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DataError("empty image payload");
  if (!is_png_or_jpeg(bytes)) {
    throw DataError("payload is not a PNG or JPEG image");
  }
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    bgr.release();
  }
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    throw DataError("payload is not a decodable PNG or JPEG image");
  }
  Rgb8Image img;
  img.width = static_cast<std::size_t>(bgr.cols);
  img.height = static_cast<std::size_t>(bgr.rows);
  img.pixels.resize(img.width * img.height * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      auto* dst = &img.pixels[(static_cast<std::size_t>(y) * img.width +
                               static_cast<std::size_t>(x)) * 3];
      dst[0] = row[3 * x + 2];
      dst[1] = row[3 * x + 1];
      dst[2] = row[3 * x + 0];
    }
  }
  return img;
}

Rgb8Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Rgb8Image& image) {
  cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width),
              CV_8UC3);
  for (std::size_t y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < image.width; ++x) {
      const auto* src = &image.pixels[(y * image.width + x) * 3];
      row[3 * x + 0] = src[2];
      row[3 * x + 1] = src[1];
      row[3 * x + 2] = src[0];
    }
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw DataError("PNG encoding failed");
  return out;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Tensor to_tensor(const Rgb8Image& image) {
  Tensor t({3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        t.at(c, y, x) = image.pixels[(y * image.width + x) * 3 + c] / 255.0;
      }
    }
  }
  return t;
}

Rgb8Image from_tensor(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw ShapeError("from_tensor expects [3,H,W], got " +
                     shape_string(chw.shape()));
  }
  Rgb8Image img{chw.dim(2), chw.dim(1), {}};
  img.pixels.resize(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(chw.at(c, y, x), 0.0, 1.0);
        img.pixels[(y * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string pixel_digest(const Rgb8Image& image) {
  std::vector<std::uint8_t> buf;
  buf.reserve(image.pixels.size() + 16);
  for (std::size_t v : {image.width, image.height}) {
    for (int shift = 0; shift < 64; shift += 8) {
      buf.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }
  buf.insert(buf.end(), image.pixels.begin(), image.pixels.end());
  return sha256_hex(buf);
}

Tensor resize_bilinear(const Tensor& chw, std::size_t out_h,
                       std::size_t out_w) {
  if (chw.rank() != 3) throw ShapeError("resize expects [C,H,W]");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be >= 1");
  const std::size_t channels = chw.dim(0), in_h = chw.dim(1),
                    in_w = chw.dim(2);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src =
          out == 1 ? (static_cast<double>(in) - 1.0) / 2.0
                   : static_cast<double>(i) * static_cast<double>(in - 1) /
                         static_cast<double>(out - 1);
      const auto lo = std::min(static_cast<std::size_t>(std::floor(src)),
                               in - 1);
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);

  Tensor out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = chw.at(c, a.lo, b.lo) * (1.0 - b.frac) +
                           chw.at(c, a.lo, b.hi) * b.frac;
        const double bottom = chw.at(c, a.hi, b.lo) * (1.0 - b.frac) +
                              chw.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1.0 - a.frac) + bottom * a.frac;
      }
    }
  }
  return out;
}

}  // namespace gdn
