#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "gdn/augment.hpp"
#include "gdn/dataset.hpp"
#include "gdn/error.hpp"
#include "gdn/fixture.hpp"
#include "gdn/image.hpp"
#include "support.hpp"

using namespace gdn;
namespace fs = std::filesystem;

namespace {

Rgb8Image noise_image(std::size_t w, std::size_t h, Rng& rng) {
  Rgb8Image img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

LabeledImage labeled(std::size_t label, const std::string& id, double value = 0.5,
                     std::size_t side = 4) {
  Tensor px({3, side, side}, value);
  Rgb8Image img = from_tensor(px);
  return {px, label, id, pixel_digest(img) + id};
}

std::vector<LabeledImage> per_class(std::size_t classes, std::size_t each) {
  std::vector<LabeledImage> out;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < each; ++i)
      out.push_back(labeled(c, "c" + std::to_string(c) + "/" + std::to_string(i)));
  return out;
}

}  // namespace

TEST(Image, PngRoundTrip) {
  Rng rng(1);
  const Rgb8Image img = noise_image(7, 5, rng);
  const Rgb8Image back = decode_image(encode_png(img));
  EXPECT_EQ(back.width, 7u);
  EXPECT_EQ(back.height, 5u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Image, RejectsNonImageBytes) {
  const std::string text = "definitely not an image";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_FALSE(is_png_or_jpeg(bytes));
  EXPECT_THROW(decode_image(bytes), DataError);
}

TEST(Image, TensorConversionRoundTrip) {
  Rng rng(2);
  const Rgb8Image img = noise_image(3, 4, rng);
  const Tensor t = to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{3, 4, 3}));
  for (double v : t.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(from_tensor(t).pixels, img.pixels);
}

TEST(Image, Sha256KnownDigest) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::vector<std::uint8_t>(abc.begin(), abc.end())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Resize, CornerAlignedBilinearOracle) {
  Rng rng(3);
  const Tensor x = test::random_tensor({2, 4, 5}, rng, 0, 1);
  const std::size_t oh = 7, ow = 3;
  const Tensor y = resize_bilinear(x, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{2, oh, ow}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const double sy = double(i) * 3.0 / double(oh - 1);
        const double sx = double(j) * 4.0 / double(ow - 1);
        const std::size_t y0 = std::min<std::size_t>(std::size_t(sy), 2);
        const std::size_t x0 = std::min<std::size_t>(std::size_t(sx), 3);
        const double fy = sy - double(y0), fx = sx - double(x0);
        auto at = [&](std::size_t r, std::size_t q) { return x.at(c, r, q); };
        const double expect = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                              fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        EXPECT_NEAR(y.at(c, i, j), expect, 1e-12);
      }
}

TEST(Resize, CornersArePreserved) {
  Rng rng(4);
  const Tensor x = test::random_tensor({1, 6, 6}, rng);
  const Tensor y = resize_bilinear(x, 11, 11);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), x.at(0, 0, 0));
  EXPECT_DOUBLE_EQ(y.at(0, 10, 10), x.at(0, 5, 5));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 10), x.at(0, 0, 5));
}

TEST(LoadDataset, SixClassesOneImageEach) {
  test::TempDir dir;
  Rng rng(5);
  const std::vector<std::string> names{"f", "b", "e", "a", "d", "c"};
  for (const auto& n : names) {
    fs::create_directories(dir / n);
    write_png(dir / n / "x.png", noise_image(3, 3, rng));
  }
  const Dataset ds = load_dataset(dir.path());
  ASSERT_EQ(ds.images.size(), 6u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"a", "b", "c", "d", "e", "f"}));
  for (const auto& img : ds.images) {
    EXPECT_EQ(ds.class_names[img.label], img.source_id.substr(0, 1));
    EXPECT_EQ(img.pixels.dim(0), 3u);
  }
}

TEST(LoadDataset, SameImageTwiceKeepsSmallestId) {
  test::TempDir dir;
  Rng rng(6);
  fs::create_directories(dir / "a");
  const Rgb8Image img = noise_image(4, 4, rng);
  write_png(dir / "a" / "z.png", img);
  write_png(dir / "a" / "m.png", img);
  const Dataset ds = load_dataset(dir.path());
  ASSERT_EQ(ds.images.size(), 1u);
  EXPECT_EQ(ds.images[0].source_id, "a/m.png");
  EXPECT_EQ(ds.duplicates_removed, 1u);
}

TEST(LoadDataset, DedupMatchesPairwisePixelCompare) {
  test::TempDir dir;
  Rng rng(7);
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  std::vector<Rgb8Image> written;
  for (int i = 0; i < 8; ++i) {
    written.push_back(noise_image(5, 5, rng));
    write_png(dir / (i % 2 ? "a" : "b") / ("img" + std::to_string(i) + ".png"),
              written.back());
  }
  // Two exact copies under other names, one of them in the other class.
  write_png(dir / "a" / "copy0.png", written[0]);
  written.push_back(written[0]);
  write_png(dir / "b" / "copy3.png", written[3]);
  written.push_back(written[3]);

  std::size_t unique = 0;
  for (std::size_t i = 0; i < written.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) seen |= written[j].pixels == written[i].pixels;
    unique += !seen;
  }
  const Dataset ds = load_dataset(dir.path());
  EXPECT_EQ(ds.images.size(), unique);
  EXPECT_EQ(ds.images.size(), 8u);
  EXPECT_EQ(ds.duplicates_removed, 2u);
  EXPECT_EQ(ds.files_seen, 10u);

  std::size_t removed = 99;
  const auto again = deduplicate(ds.images, &removed);
  EXPECT_EQ(removed, 0u);
  EXPECT_EQ(again.size(), ds.images.size());
}

TEST(LoadDataset, SkipsUndecodableFilesWithWarning) {
  test::TempDir dir;
  Rng rng(8);
  fs::create_directories(dir / "a");
  write_png(dir / "a" / "good.png", noise_image(2, 2, rng));
  std::ofstream(dir / "a" / "bad.png") << "garbage";
  const Dataset ds = load_dataset(dir.path());
  EXPECT_EQ(ds.images.size(), 1u);
  ASSERT_EQ(ds.warnings.size(), 1u);
  EXPECT_NE(ds.warnings[0].find("bad.png"), std::string::npos);
}

TEST(LoadDataset, RejectsClassWithoutUsableImages) {
  test::TempDir dir;
  Rng rng(9);
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  write_png(dir / "a" / "x.png", noise_image(2, 2, rng));
  std::ofstream(dir / "b" / "y.jpg") << "nope";
  EXPECT_THROW(load_dataset(dir.path()), DataError);
  EXPECT_THROW(load_dataset(dir / "missing"), DataError);
}

TEST(Split, EightTwoPerClass) {
  const auto images = per_class(6, 10);
  const DatasetSplit s = split_train_val(images, 0.8, 11);
  EXPECT_EQ(s.train.size(), 48u);
  EXPECT_EQ(s.val.size(), 12u);
  std::map<std::size_t, int> train_counts, val_counts;
  for (const auto& i : s.train) ++train_counts[i.label];
  for (const auto& i : s.val) ++val_counts[i.label];
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(train_counts[c], 8);
    EXPECT_EQ(val_counts[c], 2);
  }
}

TEST(Split, DeterministicAndPartition) {
  Rng rng(12);
  std::vector<LabeledImage> images;
  for (std::size_t c = 0; c < 6; ++c) {
    const std::size_t n = 2 + uniform_index(rng, 15);
    for (std::size_t i = 0; i < n; ++i)
      images.push_back(labeled(c, std::to_string(c) + "/" + std::to_string(i)));
  }
  const DatasetSplit a = split_train_val(images, 0.8, 3);
  const DatasetSplit b = split_train_val(images, 0.8, 3);
  auto ids = [](const std::vector<LabeledImage>& v) {
    std::vector<std::string> out;
    for (const auto& i : v) out.push_back(i.source_id);
    return out;
  };
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.val), ids(b.val));
  EXPECT_EQ(a.train.size() + a.val.size(), images.size());

  std::set<std::string> train_ids, train_hashes;
  for (const auto& i : a.train) {
    train_ids.insert(i.source_id);
    train_hashes.insert(i.content_hash);
  }
  for (const auto& i : a.val) {
    EXPECT_FALSE(train_ids.count(i.source_id));
    EXPECT_FALSE(train_hashes.count(i.content_hash));
  }
  std::map<std::size_t, std::pair<int, int>> counts;
  for (const auto& i : a.train) ++counts[i.label].first;
  for (const auto& i : a.val) ++counts[i.label].second;
  for (const auto& [label, tv] : counts) {
    const double n = tv.first + tv.second;
    EXPECT_LE(std::abs(tv.first - 0.8 * n), 1.0) << "class " << label;
  }
}

TEST(Split, DifferentSeedsDiffer) {
  const auto images = per_class(2, 20);
  const DatasetSplit a = split_train_val(images, 0.8, 1);
  const DatasetSplit b = split_train_val(images, 0.8, 2);
  bool differ = false;
  for (std::size_t i = 0; i < a.val.size(); ++i) differ |= a.val[i].source_id != b.val[i].source_id;
  EXPECT_TRUE(differ);
}

TEST(Split, RejectsTinyClassesAndBadRatio) {
  auto images = per_class(2, 5);
  images.push_back(labeled(2, "lonely/0"));
  EXPECT_THROW(split_train_val(images, 0.8, 1), DataError);
  EXPECT_THROW(split_train_val(per_class(2, 5), 1.0, 1), UsageError);
  EXPECT_THROW(split_train_val(per_class(2, 5), 0.0, 1), UsageError);
}

TEST(SplitManifest, RoundTripAndReapply) {
  test::TempDir dir;
  const auto images = per_class(3, 6);
  const DatasetSplit s = split_train_val(images, 0.8, 4);
  const SplitManifest m = make_split_manifest(s, "/data/root", {"x", "y", "z"});
  write_split_manifest(dir / "split.tsv", m);
  const SplitManifest back = read_split_manifest(dir / "split.tsv");
  EXPECT_EQ(back.dataset_root, fs::path("/data/root"));
  EXPECT_EQ(back.class_names, (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(back.seed, 4u);
  ASSERT_EQ(back.entries.size(), images.size());
  const DatasetSplit again = apply_split_manifest(images, back);
  ASSERT_EQ(again.train.size(), s.train.size());
  for (std::size_t i = 0; i < s.train.size(); ++i)
    EXPECT_EQ(again.train[i].source_id, s.train[i].source_id);

  std::ifstream in(dir / "split.tsv");
  std::string line;
  bool saw_entry = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2) << line;
    saw_entry = true;
  }
  EXPECT_TRUE(saw_entry);
}

TEST(SplitManifest, RejectsUnknownEntries) {
  const auto images = per_class(2, 4);
  SplitManifest m = make_split_manifest(split_train_val(images, 0.8, 1), "/r", {"a", "b"});
  m.entries.push_back({"nowhere.png", 0, SplitPart::Train});
  EXPECT_THROW(apply_split_manifest(images, m), DataError);
}

TEST(Augment, ResizeRuleForCrop) {
  EXPECT_EQ(AugmentConfig::for_crop(224).resize_to, 256u);
  EXPECT_EQ(AugmentConfig::for_crop(299).crop_to, 299u);
  EXPECT_GE(AugmentConfig::for_crop(299).resize_to, 299u);
}

TEST(Augment, OutputShapeIndependentOfInputSize) {
  Rng rng(13);
  AugmentConfig cfg;
  cfg.resize_to = 20;
  cfg.crop_to = 16;
  for (auto [h, w] : {std::pair{1, 1}, {5, 40}, {33, 7}, {20, 20}}) {
    const Tensor x = test::random_tensor({3, std::size_t(h), std::size_t(w)}, rng, 0, 1);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      const Tensor y = augment(x, cfg, mode, rng);
      EXPECT_EQ(y.shape(), (Shape{3, 16, 16}));
      EXPECT_TRUE(y.all_finite());
    }
  }
}

TEST(Augment, MeanImageNormalizesToZero) {
  AugmentConfig cfg;
  cfg.resize_to = 10;
  cfg.crop_to = 8;
  Tensor x({3, 12, 12});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 144; ++i) x[c * 144 + i] = cfg.mean[c];
  Rng rng(14);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const Tensor out = augment(x, cfg, mode, rng);
    for (double v : out.values()) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Augment, FlipIsInvolution) {
  Rng rng(15);
  const Tensor x = test::random_tensor({3, 6, 5}, rng);
  EXPECT_EQ(hflip(hflip(x)), x);
  EXPECT_NE(hflip(x), x);
  EXPECT_EQ(hflip(x).at(1, 2, 0), x.at(1, 2, 4));
}

TEST(Augment, ForcedFlipTwiceRecoversCrop) {
  Rng rng(16);
  const Tensor x = test::random_tensor({3, 10, 10}, rng, 0, 1);
  AugmentConfig cfg;
  cfg.resize_to = 10;
  cfg.crop_to = 10;
  cfg.hflip_prob = 1.0;
  Rng r1(3);
  const Tensor flipped = augment(x, cfg, Mode::Train, r1);
  cfg.hflip_prob = 0.0;
  Rng r2(3);
  const Tensor plain = augment(x, cfg, Mode::Train, r2);
  EXPECT_EQ(hflip(flipped), plain);
}

TEST(Augment, EvalIsDeterministicCenterCrop) {
  Rng rng(17);
  const Tensor x = test::random_tensor({3, 9, 9}, rng, 0, 1);
  AugmentConfig cfg;
  cfg.resize_to = 9;
  cfg.crop_to = 5;
  Rng a(1), b(999);
  const Tensor y = augment(x, cfg, Mode::Eval, a);
  EXPECT_EQ(y, augment(x, cfg, Mode::Eval, b));
  Tensor expected = crop(x, 2, 2, 5);
  normalize(expected, cfg);
  EXPECT_EQ(y, expected);
}

TEST(Augment, ValidateRejectsBadConfigs) {
  AugmentConfig cfg;
  cfg.crop_to = 300;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = AugmentConfig{};
  cfg.std[1] = 0.0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = AugmentConfig{};
  cfg.hflip_prob = 1.5;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Augment, JsonRoundTrip) {
  AugmentConfig cfg = AugmentConfig::for_crop(32);
  cfg.hflip_prob = 0.25;
  const AugmentConfig back = augment_from_json(augment_to_json(cfg));
  EXPECT_EQ(back.resize_to, cfg.resize_to);
  EXPECT_EQ(back.crop_to, cfg.crop_to);
  EXPECT_EQ(back.hflip_prob, cfg.hflip_prob);
  EXPECT_EQ(back.mean, cfg.mean);
  EXPECT_EQ(back.std, cfg.std);
}

namespace {

AugmentConfig tiny_aug() {
  AugmentConfig cfg;
  cfg.resize_to = 2;
  cfg.crop_to = 1;
  return cfg;
}

}  // namespace

TEST(Batches, PartitionSizes) {
  const auto samples = per_class(1, 10);
  const auto batches = make_batches(samples, tiny_aug(), Mode::Train, 4, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].labels.size(), 4u);
  EXPECT_EQ(batches[1].labels.size(), 4u);
  EXPECT_EQ(batches[2].labels.size(), 2u);
  EXPECT_EQ(batches[2].images.shape(), (Shape{2, 3, 1, 1}));
}

TEST(Batches, EpochSeedsReorderSameMultiset) {
  const auto samples = per_class(3, 7);
  auto collect = [&](std::uint64_t seed) {
    std::vector<std::size_t> order;
    for (const auto& b : make_batches(samples, tiny_aug(), Mode::Train, 5, seed))
      order.insert(order.end(), b.indices.begin(), b.indices.end());
    return order;
  };
  const auto a = collect(1), b = collect(2);
  EXPECT_NE(a, b);
  auto sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  EXPECT_EQ(sa, sb);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i], i);
}

TEST(Batches, PaperScaleBatchCount) {
  std::vector<LabeledImage> samples(2339, labeled(0, "x", 0.5, 1));
  const auto batches = make_batches(samples, tiny_aug(), Mode::Eval, 24, 0);
  ASSERT_EQ(batches.size(), 98u);
  EXPECT_EQ(batches.back().labels.size(), 11u);
}

TEST(Batches, EmptyInputGivesNoBatches) {
  EXPECT_TRUE(make_batches({}, tiny_aug(), Mode::Train, 4, 1).empty());
  EXPECT_THROW(make_batches(per_class(1, 2), tiny_aug(), Mode::Train, 0, 1), UsageError);
}

TEST(Batches, SampleAugmentationIgnoresBatchLayout) {
  Rng rng(18);
  std::vector<LabeledImage> samples;
  for (int i = 0; i < 6; ++i)
    samples.push_back({test::random_tensor({3, 8, 8}, rng, 0, 1), 0, std::to_string(i), ""});
  AugmentConfig cfg;
  cfg.resize_to = 8;
  cfg.crop_to = 5;
  std::map<std::size_t, Tensor> by2, by4;
  for (const auto& b : make_batches(samples, cfg, Mode::Train, 2, 7))
    for (std::size_t k = 0; k < b.indices.size(); ++k) by2[b.indices[k]] = batch_item(b.images, k);
  for (const auto& b : make_batches(samples, cfg, Mode::Train, 4, 7))
    for (std::size_t k = 0; k < b.indices.size(); ++k) by4[b.indices[k]] = batch_item(b.images, k);
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(by2[i], by4[i]);
}

TEST(Fixture, WritesLoadableSixClassDataset) {
  test::TempDir dir;
  FixtureConfig cfg;
  cfg.images_per_class = 3;
  cfg.side = 12;
  cfg.duplicates = 2;
  EXPECT_EQ(write_texture_fixture(dir.path(), cfg), 20u);
  const Dataset ds = load_dataset(dir.path());
  EXPECT_EQ(ds.class_names.size(), 6u);
  EXPECT_EQ(ds.duplicates_removed, 2u);
  EXPECT_EQ(ds.images.size(), 18u);
}
