#pragma once

#include <stdlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <string>
#include <system_error>
#include <vector>

#include "gdn/checkpoint.hpp"
#include "gdn/graph.hpp"
#include "gdn/meta.hpp"
#include "gdn/predictor.hpp"
#include "gdn/random.hpp"
#include "gdn/tensor.hpp"

namespace gdn::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string templ =
        (std::filesystem::temp_directory_path() / "gdn-test-XXXXXX").string();
    if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path source_dir() { return GDN_SOURCE_DIR; }

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

// ------------------------------------------------------------ naive oracles

inline Tensor naive_conv2d(const Tensor& x, const Tensor& k, std::size_t stride,
                           std::size_t pad) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor y({O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              const long q = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W))
                continue;
              s += x[(c * H + r) * W + q] * k[((o * C + c) * kh + a) * kw + b];
            }
        y[(o * Ho + i) * Wo + j] = s;
      }
  return y;
}

inline Tensor naive_pool(const Tensor& x, bool max_kind, std::size_t window,
                         std::size_t stride) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  Tensor y({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = max_kind ? -INFINITY : 0.0;
        for (std::size_t a = 0; a < window; ++a)
          for (std::size_t b = 0; b < window; ++b) {
            const double v = x[(c * H + i * stride + a) * W + j * stride + b];
            acc = max_kind ? std::max(acc, v) : acc + v;
          }
        y[(c * Ho + i) * Wo + j] = max_kind ? acc : acc / double(window * window);
      }
  return y;
}

inline Tensor naive_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t m = w.dim(0), n = w.dim(1);
  Tensor y({m});
  for (std::size_t j = 0; j < m; ++j) {
    double s = b[j];
    for (std::size_t i = 0; i < n; ++i) s += w[j * n + i] * x[i];
    y[j] = s;
  }
  return y;
}

// Direct formula: -x[class] + log(sum exp(x - max)) + max.
inline double direct_cross_entropy(const std::vector<double>& x, std::size_t cls) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  return -x[cls] + mx + std::log(s);
}

// ---------------------------------------------------------- artifact helpers

inline NetworkSpec small_spec(Family family, std::size_t side = 32) {
  NetworkSpec s = family == Family::GoogLeNetLike ? mini_googlenet_spec()
                                                  : mini_densenet_spec();
  s.input_side = side;
  return s;
}

// Untrained networks plus a logistic meta-model fitted on synthetic rows:
// enough for exercising the predictor and the service end to end.
inline void write_models_dir(const std::filesystem::path& dir, std::uint64_t seed = 5) {
  std::filesystem::create_directories(dir);
  const AugmentConfig aug = AugmentConfig::for_crop(32);
  save_checkpoint(build_network(small_spec(Family::GoogLeNetLike), seed), {aug, 0, 0.0},
                  dir / kGoogleCheckpoint);
  save_checkpoint(build_network(small_spec(Family::DenseNetLike), seed + 1), {aug, 0, 0.0},
                  dir / kDenseCheckpoint);
  L1LogRegConfig cfg;
  save_meta_model(dir / kMetaModelFile,
                  fit_l1_logreg(make_noisy_expert_features(300, seed), cfg));
}

inline Rgb8Image solid_image(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g,
                             std::uint8_t b) {
  Rgb8Image img{w, h, {}};
  for (std::size_t i = 0; i < w * h; ++i) img.pixels.insert(img.pixels.end(), {r, g, b});
  return img;
}

// ------------------------------------------------- gradient-check networks

struct Net {
  ComputeGraph g;
  ParameterStore p;
  NodeId loss = 0;
  Tensor input;
  ForwardContext ctx;
};

inline NodeId param(Net& n, const std::string& name, Tensor t) {
  return n.g.parameter(n.p, n.p.add(name, std::move(t)));
}

// conv -> relu -> pool -> linear -> CE on a 2x6x6 input.
inline Net micro_network(std::uint64_t seed, ops::PoolKind pool = ops::PoolKind::Max) {
  Rng rng(seed);
  Net n;
  const NodeId x = n.g.input({2, 6, 6});
  const NodeId k = param(n, "conv.w", random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  const NodeId kb = param(n, "conv.b", random_tensor({3}, rng, -0.1, 0.1));
  NodeId h = n.g.conv2d(x, k, kb, 1, 1, "conv");
  h = n.g.relu(h, "relu");
  h = n.g.pool2d(h, pool, 2, 2, 0, "pool");
  h = n.g.flatten(h, "flat");
  const NodeId w = param(n, "fc.w", random_tensor({6, 27}, rng, -0.3, 0.3));
  const NodeId b = param(n, "fc.b", random_tensor({6}, rng, -0.1, 0.1));
  h = n.g.linear(h, w, b, "fc");
  n.loss = n.g.cross_entropy(h, "loss");
  n.input = random_tensor({2, 6, 6}, rng);
  n.ctx.label = 4;
  return n;
}

// One network per layer kind, each closed by flatten -> linear -> CE so the
// loss is scalar. Kinds: 0 conv, 1 max pool, 2 average pool, 3 global
// average pool, 4 relu, 5 concat, 6 dropout, 7 softmax.
inline constexpr int kLayerKinds = 8;

inline Net layer_network(int kind) {
  Rng rng(100 + kind);
  Net n;
  const NodeId x = n.g.input({2, 5, 5});
  n.input = random_tensor({2, 5, 5}, rng);
  NodeId h = x;
  switch (kind) {
    case 0: {  // strided, padded conv with bias
      const NodeId k = param(n, "k", random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
      const NodeId kb = param(n, "kb", random_tensor({3}, rng));
      h = n.g.conv2d(x, k, kb, 2, 1, "conv");
      break;
    }
    case 1:  // max pool with padding
      h = n.g.pool2d(x, ops::PoolKind::Max, 3, 2, 1, "pool");
      break;
    case 2:  // average pool with padding
      h = n.g.pool2d(x, ops::PoolKind::Average, 3, 1, 1, "pool");
      break;
    case 3:
      h = n.g.global_avg_pool(x, "gap");
      break;
    case 4: {  // relu after a conv so parameters sit upstream
      const NodeId k = param(n, "k", random_tensor({2, 2, 1, 1}, rng));
      h = n.g.relu(n.g.conv2d(x, k, std::nullopt, 1, 0, "conv"), "relu");
      break;
    }
    case 5: {  // concat of two conv branches
      const NodeId k1 = param(n, "k1", random_tensor({1, 2, 1, 1}, rng));
      const NodeId k2 = param(n, "k2", random_tensor({2, 2, 3, 3}, rng, -0.3, 0.3));
      h = n.g.concat({n.g.conv2d(x, k1, std::nullopt, 1, 0, "a"),
                      n.g.conv2d(x, k2, std::nullopt, 1, 1, "b")},
                     "cat");
      break;
    }
    case 6: {  // dropout in train mode with a fixed mask seed
      const NodeId k = param(n, "k", random_tensor({2, 2, 1, 1}, rng));
      h = n.g.dropout(n.g.conv2d(x, k, std::nullopt, 1, 0, "conv"), 0.5, "drop");
      n.ctx.mode = Mode::Train;
      n.ctx.seed = 77;
      break;
    }
    case 7: {  // softmax feeding a further linear layer
      h = n.g.flatten(x, "flat");
      const NodeId w = param(n, "w0", random_tensor({6, 50}, rng, -0.2, 0.2));
      const NodeId b = param(n, "b0", random_tensor({6}, rng));
      h = n.g.softmax(n.g.linear(h, w, b, "fc0"), "sm");
      break;
    }
  }
  h = n.g.flatten(h, "flatten");
  const std::size_t width = n.g.shape(h)[0];
  const NodeId w = param(n, "w", random_tensor({6, width}, rng, -0.5, 0.5));
  const NodeId b = param(n, "b", random_tensor({6}, rng));
  n.loss = n.g.cross_entropy(n.g.linear(h, w, b, "fc"), "loss");
  n.ctx.label = 1;
  return n;
}

// ------------------------------------------------------ meta-model oracles

// Exhaustive neighbor oracle: full sort by (distance, index), majority vote
// with ties to the lowest class.
inline std::size_t brute_knn(const StackedFeatures& train, std::size_t k,
                      const std::vector<double>& q) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < train.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j)
      s += (train.rows[i][j] - q[j]) * (train.rows[i][j] - q[j]);
    all.emplace_back(s, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> votes(6, 0);
  for (std::size_t i = 0; i < k; ++i) ++votes[train.labels[all[i].second]];
  std::size_t best = 0;
  for (std::size_t c = 1; c < 6; ++c)
    if (votes[c] > votes[best]) best = c;
  return best;
}

inline double gini_of(const std::vector<std::size_t>& counts) {
  double n = 0;
  for (auto c : counts) n += double(c);
  if (n == 0) return 0;
  double s = 1;
  for (auto c : counts) s -= (double(c) / n) * (double(c) / n);
  return s;
}

// Exhaustive split search: every feature, every midpoint between consecutive
// distinct values, child histograms counted from scratch.
struct OracleTree {
  const StackedFeatures& f;
  std::size_t max_depth, min_leaf;

  std::size_t predict(const std::vector<std::size_t>& idx, std::size_t depth,
                      const std::vector<double>& q) const {
    std::vector<std::size_t> counts(6, 0);
    for (auto i : idx) ++counts[f.labels[i]];
    const double parent = gini_of(counts);
    auto majority = [&] {
      return std::size_t(std::max_element(counts.begin(), counts.end()) - counts.begin());
    };
    if (depth >= max_depth || parent == 0.0 || idx.size() < 2 * min_leaf) return majority();
    double best = parent;
    bool found = false;
    std::size_t bf = 0;
    double bt = 0;
    for (std::size_t j = 0; j < f.dim(); ++j) {
      std::vector<double> vals;
      for (auto i : idx) vals.push_back(f.rows[i][j]);
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      for (std::size_t t = 0; t + 1 < vals.size(); ++t) {
        const double thr = vals[t] + (vals[t + 1] - vals[t]) / 2.0;
        std::vector<std::size_t> l(6, 0), r(6, 0);
        std::size_t nl = 0;
        for (auto i : idx) {
          if (f.rows[i][j] <= thr) {
            ++l[f.labels[i]];
            ++nl;
          } else {
            ++r[f.labels[i]];
          }
        }
        const std::size_t nr = idx.size() - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double score = (double(nl) * gini_of(l) + double(nr) * gini_of(r)) /
                             double(idx.size());
        if (score < best - 1e-12) {
          best = score;
          bf = j;
          bt = thr;
          found = true;
        }
      }
    }
    if (!found) return majority();
    std::vector<std::size_t> li, ri;
    for (auto i : idx) (f.rows[i][bf] <= bt ? li : ri).push_back(i);
    return q[bf] <= bt ? predict(li, depth + 1, q) : predict(ri, depth + 1, q);
  }

  std::size_t operator()(const std::vector<double>& q) const {
    std::vector<std::size_t> all(f.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return predict(all, 0, q);
  }
};

}  // namespace gdn::test
