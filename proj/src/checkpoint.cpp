#include "gdn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "gdn/error.hpp"
#include "gdn/image.hpp"

namespace gdn {
namespace {

constexpr char kMagic[4] = {'G', 'D', 'N', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
      out_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const std::string& field) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated while reading " + field);
    }
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(in_[pos_ + k]) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  std::string str(const std::string& field) {
    const auto n = u32(field + " length");
    need(n, field);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32(const std::string& field) {
    return std::bit_cast<float>(u32(field));
  }
  std::span<const std::uint8_t> raw(std::size_t n, const std::string& field) {
    need(n, field);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model,
                                               const CheckpointMetadata& meta) {
  const nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"family", family_name(model.spec().family)},
      {"spec", spec_to_json(model.spec())},
      {"augment", augment_to_json(meta.augment)},
      {"metrics",
       {{"epochs_completed", meta.epochs_completed},
        {"final_val_accuracy", meta.final_val_accuracy}}}};
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.str(header.dump());
  const auto& params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(params.name(i));
    const Tensor& t = params[i];
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
      w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return w.take();
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                        std::optional<Family> expected) {
  Reader r(bytes);
  const auto magic = r.raw(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint magic: expected 'GDN1'");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str("metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto version = header.value("format_version", 0u);
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint format_version: expected " +
                      std::to_string(kCheckpointFormatVersion) + ", found " +
                      std::to_string(version));
  }
  if (!header.contains("spec") || !header.contains("family")) {
    throw FormatError("checkpoint metadata: missing spec or family");
  }
  const NetworkSpec spec = spec_from_json(header["spec"]);
  if (family_name(spec.family) != header["family"].get<std::string>()) {
    throw FormatError("checkpoint family: header and spec disagree");
  }
  if (expected && *expected != spec.family) {
    throw FormatError("checkpoint family: expected " + family_name(*expected) +
                      " but file holds " + family_name(spec.family));
  }

  LoadedCheckpoint out{build_network(spec, 0), {}, sha256_hex(bytes)};
  try {
    if (header.contains("augment")) {
      out.metadata.augment = augment_from_json(header["augment"]);
    }
    if (header.contains("metrics")) {
      const auto& m = header["metrics"];
      out.metadata.epochs_completed =
          m.value("epochs_completed", std::size_t{0});
      out.metadata.final_val_accuracy = m.value("final_val_accuracy", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metrics: ") + e.what());
  }

  ParameterStore& params = out.model.params();
  const auto count = r.u32("parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint parameter count: expected " +
                      std::to_string(params.size()) + ", found " +
                      std::to_string(count));
  }
  std::vector<bool> filled(params.size(), false);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str("parameter name");
    const auto index = params.find(name);
    if (!index) throw FormatError("checkpoint parameter: unknown layer name '" + name + "'");
    if (filled[*index]) throw FormatError("checkpoint parameter: duplicate '" + name + "'");
    Tensor& t = params[*index];
    const auto rank = r.u32(name + " rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32(name + " extent"));
    if (shape != t.shape()) {
      throw FormatError("checkpoint parameter '" + name + "': shape " +
                        shape_string(shape) + " does not match " +
                        shape_string(t.shape()));
    }
    for (double& v : t.values()) v = r.f32(name + " values");
    filled[*index] = true;
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after parameters");
  return out;
}

void save_checkpoint(const Model& model, const CheckpointMetadata& meta,
                     const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<Family> expected) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_checkpoint(bytes, expected);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace gdn
