#include "gdn/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "gdn/classes.hpp"
#include "gdn/error.hpp"
#include "gdn/image.hpp"
#include "gdn/model_zoo.hpp"
#include "gdn/random.hpp"

namespace gdn {
namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

const char* part_name(SplitPart part) {
  return part == SplitPart::Train ? "train" : "val";
}

}  // namespace

std::optional<LesionClass> find_lesion_class(std::string_view name) {
  auto normalize = [](std::string_view s) {
    std::string out;
    for (char c : s) {
      if (c == ' ' || c == '-') c = '_';
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
  };
  const std::string key = normalize(name);
  for (const auto& cls : kLesionClasses) {
    if (key == normalize(cls.id) || key == normalize(cls.display)) return cls;
  }
  return std::nullopt;
}

std::vector<LabeledImage> deduplicate(std::vector<LabeledImage> images,
                                      std::size_t* removed) {
  std::sort(images.begin(), images.end(),
            [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
  std::unordered_map<std::string, bool> seen;
  std::vector<LabeledImage> kept;
  for (auto& img : images) {
    if (seen.emplace(img.content_hash, true).second) kept.push_back(std::move(img));
  }
  if (removed) *removed = images.size() - kept.size();
  return kept;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw DataError("dataset root is not a directory: " + root.string());
  }
  Dataset ds;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) {
      ds.class_names.push_back(entry.path().filename().string());
    }
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.empty()) {
    throw DataError("no class subdirectories under " + root.string());
  }
  if (ds.class_names.size() > kNumClasses) {
    throw DataError("found " + std::to_string(ds.class_names.size()) +
                    " class directories under " + root.string() +
                    "; at most " + std::to_string(kNumClasses) +
                    " are supported");
  }

  std::vector<LabeledImage> images;
  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    const fs::path dir = root / ds.class_names[label];
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && has_image_extension(entry.path())) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::size_t usable = 0;
    for (const auto& file : files) {
      ++ds.files_seen;
      Rgb8Image decoded;
      try {
        decoded = read_image(file);
      } catch (const DataError& e) {
        ds.warnings.push_back(std::string("skipped undecodable file: ") + e.what());
        continue;
      }
      ++usable;
      images.push_back({to_tensor(decoded), label,
                        ds.class_names[label] + "/" + file.filename().string(),
                        pixel_digest(decoded)});
    }
    if (usable == 0) {
      throw DataError("class '" + ds.class_names[label] +
                      "' has no usable images in " + dir.string());
    }
  }
  ds.images = deduplicate(std::move(images), &ds.duplicates_removed);
  return ds;
}

namespace {

// Both split routes hand back parts in source_id order, so a replayed split
// feeds the trainer exactly the same sequence.
void sort_by_id(std::vector<LabeledImage>& part) {
  std::sort(part.begin(), part.end(), [](const auto& a, const auto& b) {
    return a.source_id < b.source_id;
  });
}

}  // namespace

DatasetSplit split_train_val(std::span<const LabeledImage> images,
                             double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw UsageError("split ratio must lie in (0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < images.size(); ++i) {
    by_class[images[i].label].push_back(i);
  }
  DatasetSplit split;
  split.seed = seed;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) {
      throw DataError("class " + std::to_string(label) + " has " +
                      std::to_string(idx.size()) +
                      " image(s); at least 2 are needed to split");
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return images[a].source_id < images[b].source_id;
    });
    Rng rng(derive_seed(seed, label));
    shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))),
        1, n - 1);
    for (std::size_t k = 0; k < n; ++k) {
      (k < n_train ? split.train : split.val).push_back(images[idx[k]]);
    }
  }
  sort_by_id(split.train);
  sort_by_id(split.val);
  return split;
}

SplitManifest make_split_manifest(const DatasetSplit& split,
                                  const fs::path& root,
                                  std::vector<std::string> class_names) {
  SplitManifest m{root, std::move(class_names), split.seed, {}};
  for (const auto& img : split.train) {
    m.entries.push_back({img.source_id, img.label, SplitPart::Train});
  }
  for (const auto& img : split.val) {
    m.entries.push_back({img.source_id, img.label, SplitPart::Val});
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
  return m;
}

void write_split_manifest(const fs::path& path, const SplitManifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# dataset_root\t" << m.dataset_root.string() << '\n';
  out << "# classes\t";
  for (std::size_t i = 0; i < m.class_names.size(); ++i) {
    out << (i ? "," : "") << m.class_names[i];
  }
  out << '\n' << "# seed\t" << m.seed << '\n';
  for (const auto& e : m.entries) {
    out << e.source_id << '\t' << e.label << '\t' << part_name(e.part) << '\n';
  }
}

SplitManifest read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  SplitManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& why) {
      return DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (line[0] == '#') {
      if (fields.size() != 2) continue;
      if (fields[0] == "# dataset_root") {
        m.dataset_root = fields[1];
      } else if (fields[0] == "# classes") {
        std::stringstream cs(fields[1]);
        for (std::string c; std::getline(cs, c, ',');) m.class_names.push_back(c);
      } else if (fields[0] == "# seed") {
        m.seed = std::stoull(fields[1]);
      }
      continue;
    }
    if (fields.size() != 3) throw fail("expected 3 tab-separated fields");
    SplitEntry e;
    e.source_id = fields[0];
    try {
      e.label = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw fail("bad label '" + fields[1] + "'");
    }
    if (fields[2] == "train") {
      e.part = SplitPart::Train;
    } else if (fields[2] == "val") {
      e.part = SplitPart::Val;
    } else {
      throw fail("split part must be train or val");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetSplit apply_split_manifest(std::span<const LabeledImage> images,
                                  const SplitManifest& manifest) {
  std::unordered_map<std::string, const LabeledImage*> by_id;
  for (const auto& img : images) by_id.emplace(img.source_id, &img);
  DatasetSplit split;
  split.seed = manifest.seed;
  for (const auto& e : manifest.entries) {
    const auto it = by_id.find(e.source_id);
    if (it == by_id.end()) {
      throw DataError("split manifest references missing image " + e.source_id);
    }
    if (it->second->label != e.label) {
      throw DataError("label mismatch for " + e.source_id);
    }
    (e.part == SplitPart::Train ? split.train : split.val).push_back(*it->second);
  }
  sort_by_id(split.train);
  sort_by_id(split.val);
  return split;
}

}  // namespace gdn
