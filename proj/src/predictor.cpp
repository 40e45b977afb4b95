#include "gdn/predictor.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "gdn/classes.hpp"
#include "gdn/error.hpp"

namespace gdn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string file_digest(const std::filesystem::path& path) {
  return sha256_hex(read_file_bytes(path));
}

}  // namespace

Suggestions Suggestions::parse(const std::string& text, const std::string& origin) {
  Suggestions s;
  std::istringstream in(text);
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const auto where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw DataError(where + ": expected class = text");
    const auto cls = find_lesion_class(trim(t.substr(0, eq)));
    if (!cls) throw DataError(where + ": unknown class '" + trim(t.substr(0, eq)) + "'");
    std::string advice = trim(t.substr(eq + 1));
    if (cls->cancer && advice.find(kUrgentSentence) == std::string::npos) {
      advice += advice.empty() ? "" : " ";
      advice += kUrgentSentence;
    }
    s.by_id_[std::string(cls->id)] = advice;
  }
  for (const auto& cls : kLesionClasses) {
    const auto it = s.by_id_.find(std::string(cls.id));
    if (it == s.by_id_.end() || it->second.empty()) {
      throw DataError(origin + ": no suggestion for class '" + std::string(cls.id) + "'");
    }
  }
  return s;
}

Suggestions Suggestions::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open suggestions file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& Suggestions::suggestion_for(std::string_view class_name) const {
  const auto cls = find_lesion_class(class_name);
  const auto it = cls ? by_id_.find(std::string(cls->id)) : by_id_.end();
  if (it == by_id_.end()) {
    throw Error("no suggestion configured for class '" + std::string(class_name) + "'");
  }
  return it->second;
}

GdnPredictor::GdnPredictor(LoadedCheckpoint google, LoadedCheckpoint dense,
                           MetaModel meta, ModelVersions versions)
    : google_(std::move(google)),
      dense_(std::move(dense)),
      meta_(std::move(meta)),
      versions_(std::move(versions)) {}

GdnPredictor GdnPredictor::load(const std::filesystem::path& dir) {
  auto google = load_checkpoint(dir / kGoogleCheckpoint, Family::GoogLeNetLike);
  auto dense = load_checkpoint(dir / kDenseCheckpoint, Family::DenseNetLike);
  auto meta = load_meta_model(dir / kMetaModelFile);
  ModelVersions v{google.digest, dense.digest, file_digest(dir / kMetaModelFile)};
  return GdnPredictor(std::move(google), std::move(dense), std::move(meta), std::move(v));
}

std::array<double, kNumClasses> meta_probabilities(const MetaModel& m,
                                                   std::span<const double> x) {
  std::array<double, kNumClasses> p{};
  if (const auto* lr = std::get_if<L1LogRegModel>(&m)) {
    const auto scores = predict_logreg(*lr, x);
    if (scores.normalized.size() != kNumClasses) {
      throw ShapeError("meta model does not have 6 classes");
    }
    std::copy(scores.normalized.begin(), scores.normalized.end(), p.begin());
  } else {
    p[predict_class(m, x)] = 1.0;
  }
  return p;
}

GdnOutput GdnPredictor::predict_pixels(const Tensor& pixels) const {
  Rng unused(0);
  GdnOutput out;
  const Tensor g = google_.model.predict(
      augment(pixels, google_.metadata.augment, Mode::Eval, unused));
  const Tensor d = dense_.model.predict(
      augment(pixels, dense_.metadata.augment, Mode::Eval, unused));
  std::copy(g.values().begin(), g.values().end(), out.googlenet.begin());
  std::copy(d.values().begin(), d.values().end(), out.densenet.begin());
  std::vector<double> x(out.googlenet.begin(), out.googlenet.end());
  x.insert(x.end(), out.densenet.begin(), out.densenet.end());
  out.predicted = predict_class(meta_, x);
  out.probabilities = meta_probabilities(meta_, x);
  return out;
}

GdnOutput GdnPredictor::predict(const Rgb8Image& image) const {
  return predict_pixels(to_tensor(image));
}

nlohmann::ordered_json GdnPredictor::describe() const {
  auto checkpoint = [](const LoadedCheckpoint& c) {
    nlohmann::ordered_json j;
    j["family"] = family_name(c.model.spec().family);
    j["digest"] = c.digest;
    j["input_side"] = c.model.spec().input_side;
    j["parameters"] = c.model.params().scalar_count();
    j["epochs_completed"] = c.metadata.epochs_completed;
    j["final_val_accuracy"] = c.metadata.final_val_accuracy;
    j["augment"] = augment_to_json(c.metadata.augment);
    return j;
  };
  nlohmann::ordered_json j;
  j["googlenet_like"] = checkpoint(google_);
  j["densenet_like"] = checkpoint(dense_);
  j["meta"] = {{"kind", meta_kind(meta_)}, {"digest", versions_.meta}};
  return j;
}

nlohmann::ordered_json model_versions_json(const ModelVersions& v) {
  nlohmann::ordered_json j;
  j["googlenet_like"] = v.googlenet;
  j["densenet_like"] = v.densenet;
  j["meta"] = v.meta;
  return j;
}

nlohmann::ordered_json build_report(const GdnOutput& out,
                                    const Suggestions& suggestions,
                                    const ModelVersions& versions,
                                    const std::string& timestamp) {
  const auto& cls = kLesionClasses.at(out.predicted);
  nlohmann::ordered_json probs = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    nlohmann::ordered_json entry;
    entry["class"] = std::string(kLesionClasses[k].display);
    entry["probability"] = out.probabilities[k];
    probs.push_back(entry);
  }
  nlohmann::ordered_json j;
  j["predicted_class"] = std::string(cls.display);
  j["class_probabilities"] = probs;
  j["cancer_flag"] = cls.cancer;
  j["suggestion"] = suggestions.suggestion_for(cls.id);
  j["model_versions"] = model_versions_json(versions);
  j["timestamp"] = timestamp;
  return j;
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace gdn
