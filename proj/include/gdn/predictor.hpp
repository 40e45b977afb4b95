#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "gdn/checkpoint.hpp"
#include "gdn/image.hpp"
#include "gdn/meta.hpp"

namespace gdn {

inline constexpr std::string_view kUrgentSentence =
    "Please arrange an urgent consultation with a dermatologist.";

// Per-class advisory text, read from `class_id = text` lines. Cancer classes
// get kUrgentSentence appended when the configured text lacks it.
class Suggestions {
 public:
  static Suggestions parse(const std::string& text, const std::string& origin = "suggestions");
  static Suggestions load(const std::filesystem::path& path);

  // Throws Error for a class the table does not know.
  const std::string& suggestion_for(std::string_view class_name) const;

 private:
  std::map<std::string, std::string> by_id_;
};

// File names inside a models directory.
inline constexpr const char* kGoogleCheckpoint = "googlenet.gdnc";
inline constexpr const char* kDenseCheckpoint = "densenet.gdnc";
inline constexpr const char* kMetaModelFile = "meta_model.txt";

struct ModelVersions {
  std::string googlenet;  // SHA-256 of each artifact file
  std::string densenet;
  std::string meta;
};

struct GdnOutput {
  std::size_t predicted = 0;
  std::array<double, kNumClasses> probabilities{};
  std::array<double, kNumClasses> googlenet{};
  std::array<double, kNumClasses> densenet{};
};

// Frozen two-network stack plus meta-model. All methods are const and safe
// to call from many threads.
class GdnPredictor {
 public:
  static GdnPredictor load(const std::filesystem::path& models_dir);

  GdnOutput predict(const Rgb8Image& image) const;
  // `pixels` is a [3,H,W] tensor with values in [0,1].
  GdnOutput predict_pixels(const Tensor& pixels) const;

  const ModelVersions& versions() const { return versions_; }
  const MetaModel& meta() const { return meta_; }
  nlohmann::ordered_json describe() const;

 private:
  GdnPredictor(LoadedCheckpoint google, LoadedCheckpoint dense, MetaModel meta,
               ModelVersions versions);

  LoadedCheckpoint google_;
  LoadedCheckpoint dense_;
  MetaModel meta_;
  ModelVersions versions_;
};

// Class probabilities from a meta-model: normalized sigmoid scores for the
// logistic model, a one-hot vector on the predicted class otherwise.
std::array<double, kNumClasses> meta_probabilities(const MetaModel& m,
                                                   std::span<const double> x);

nlohmann::ordered_json model_versions_json(const ModelVersions& v);

// Report shared by `gdn predict` and the HTTP service.
nlohmann::ordered_json build_report(const GdnOutput& out,
                                    const Suggestions& suggestions,
                                    const ModelVersions& versions,
                                    const std::string& timestamp);

// ISO-8601 UTC, second resolution.
std::string utc_timestamp();

}  // namespace gdn
