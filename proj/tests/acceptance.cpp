// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "gdn/cli.hpp"
#include "gdn/fixture.hpp"
#include "gdn/gradcheck.hpp"
#include "gdn/ops.hpp"
#include "gdn/trainer.hpp"
#include "support.hpp"

using namespace gdn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ------------------------------------------------------------------ criteria

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opt;
  opt.epsilon = 1e-3;
  double worst = 0;
  for (int kind = 0; kind < test::kLayerKinds; ++kind) {
    test::Net n = test::layer_network(kind);
    const double err = finite_diff_check(n.g, n.p, n.input, n.ctx, n.loss, opt);
    o.require(err < 1e-4, "layer kind " + std::to_string(kind) + " error " + fmt(err));
    worst = std::max(worst, err);
  }
  for (auto pool : {ops::PoolKind::Max, ops::PoolKind::Average}) {
    test::Net n = test::micro_network(11, pool);
    const double err = finite_diff_check(n.g, n.p, n.input, n.ctx, n.loss, opt);
    o.require(err < 1e-4, "micro-network error " + fmt(err));
    worst = std::max(worst, err);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 30, "took " + fmt(secs) + " s");
  o.note("max_rel_err " + fmt(worst) + ", " + fmt(secs) + " s");
  return o;
}

Outcome kernel_oracles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); };
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    {
      const std::size_t c = pick(1, 4), h = pick(3, 12), w = pick(3, 12), out = pick(1, 5);
      const std::size_t k = pick(1, std::min<std::size_t>(5, std::min(h, w)));
      const std::size_t stride = pick(1, 3), pad = pick(0, k - 1);
      const Tensor x = test::random_tensor({c, h, w}, rng);
      const Tensor kern = test::random_tensor({out, c, k, k}, rng);
      worst = std::max(worst, max_abs_diff(ops::conv2d(x, kern, stride, pad),
                                           test::naive_conv2d(x, kern, stride, pad)));
    }
    {
      const std::size_t c = pick(1, 4), h = pick(2, 12), w = pick(2, 12);
      const std::size_t win = pick(1, std::min(h, w)), stride = pick(1, 3);
      const Tensor x = test::random_tensor({c, h, w}, rng);
      worst = std::max(worst, max_abs_diff(ops::pool2d(x, ops::PoolKind::Max, win, stride),
                                           test::naive_pool(x, true, win, stride)));
      worst = std::max(worst, max_abs_diff(ops::pool2d(x, ops::PoolKind::Average, win, stride),
                                           test::naive_pool(x, false, win, stride)));
    }
    {
      const std::size_t n = pick(1, 40), m = pick(1, 20);
      const Tensor x = test::random_tensor({n}, rng);
      const Tensor wt = test::random_tensor({m, n}, rng);
      const Tensor b = test::random_tensor({m}, rng);
      worst = std::max(worst, max_abs_diff(ops::linear_affine(x, wt, b),
                                           test::naive_linear(x, wt, b)));
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-6, "max abs diff " + fmt(worst));
  o.require(secs < 30, "took " + fmt(secs) + " s");
  o.note("200 shapes per kernel, max abs diff " + fmt(worst) + ", " + fmt(secs) + " s");
  return o;
}

Outcome cross_entropy_oracle() {
  Outcome o;
  const double uniform_loss = ops::cross_entropy_loss(Tensor({6}, 0.37), 3);
  o.require(std::abs(uniform_loss - std::log(6.0)) <= 1e-9,
            "uniform loss " + fmt(uniform_loss, 17));
  Rng rng(31);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> z(6);
    for (auto& v : z) v = uniform(rng, -20, 20);
    const std::size_t cls = uniform_index(rng, 6);
    const double got = ops::cross_entropy_loss(Tensor({6}, z), cls);
    worst = std::max(worst, std::abs(got - test::direct_cross_entropy(z, cls)));
  }
  o.require(worst <= 1e-9, "random logits diff " + fmt(worst));
  o.note("uniform |L - ln 6| " + fmt(std::abs(uniform_loss - std::log(6.0))) +
         ", random max diff " + fmt(worst));
  return o;
}

Outcome adam_oracle() {
  Outcome o;
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  double worst = 0;
  for (double g : {1.0, -0.25, 3.5, 1e-6}) {
    std::vector<double> p{0.4}, grad{g}, m{0}, v{0};
    double rp = 0.4, rm = 0, rv = 0;
    for (std::size_t t = 1; t <= 10; ++t) {
      rm = cfg.adam_beta1 * rm + (1 - cfg.adam_beta1) * g;
      rv = cfg.adam_beta2 * rv + (1 - cfg.adam_beta2) * g * g;
      const double mh = rm / (1 - std::pow(cfg.adam_beta1, double(t)));
      const double vh = rv / (1 - std::pow(cfg.adam_beta2, double(t)));
      rp -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_epsilon);
      adam_update(p, grad, m, v, t, cfg);
      worst = std::max(worst, std::abs(p[0] - rp));
    }
  }
  o.require(worst <= 1e-12, "max diff " + fmt(worst));
  o.note("10 steps x 4 gradients, max diff " + fmt(worst));
  return o;
}

Outcome l1_logreg_solver() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  // The two-point toy has its optimum at w = 0; four copies move it off zero.
  double worst_gap = 0;
  for (std::size_t copies : {1u, 4u}) {
    StackedFeatures toy;
    for (std::size_t r = 0; r < copies; ++r) {
      toy.rows.push_back({-1.0});
      toy.labels.push_back(0);
      toy.rows.push_back({1.0});
      toy.labels.push_back(1);
    }
    L1LogRegConfig cfg;
    cfg.C = 1.0;
    cfg.tol = 1e-12;
    cfg.max_iters = 100000;
    const L1LogRegModel m = fit_l1_logreg(toy, cfg, 2);
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<int> y;
      for (auto l : toy.labels) y.push_back(l == k ? 1 : -1);
      // Direct evaluation, independent of the library objective.
      auto objective = [&](double w, double c) {
        double loss = 0;
        for (std::size_t i = 0; i < toy.size(); ++i)
          loss += std::log(std::exp(-y[i] * (toy.rows[i][0] * w + c)) + 1.0);
        return std::abs(w) + loss;
      };
      double grid = INFINITY;
      for (int a = -1000; a <= 1000; ++a) {
        for (int b = -1000; b <= 1000; ++b) grid = std::min(grid, objective(a * 0.01, b * 0.01));
      }
      const double got = objective(m.weights[k][0], m.intercepts[k]);
      worst_gap = std::max(worst_gap, std::abs(got - grid));
    }
  }
  o.require(worst_gap <= 1e-3, "grid gap " + fmt(worst_gap));

  bool monotone = true;
  std::size_t traces = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (double C : {1e-3, 0.02126, 1.0, 100.0}) {
      L1LogRegConfig c;
      c.C = C;
      c.tol = 1e-9;
      for (const auto& tr : fit_l1_logreg(make_noisy_expert_features(300, seed), c).objective_trace) {
        ++traces;
        for (std::size_t i = 1; i < tr.size(); ++i) monotone &= tr[i] <= tr[i - 1];
      }
    }
  }
  o.require(monotone, "objective increased");

  L1LogRegConfig tiny;
  tiny.C = 1e-9;
  const L1LogRegModel z = fit_l1_logreg(make_noisy_expert_features(300, 4), tiny);
  bool exact_zero = true;
  for (const auto& w : z.weights)
    for (double v : w) exact_zero &= v == 0.0;
  o.require(exact_zero, "nonzero weight at C = 1e-9");

  const double secs = seconds_since(t0);
  o.require(secs < 10, "took " + fmt(secs) + " s");
  o.note("grid gap " + fmt(worst_gap) + ", " + std::to_string(traces) +
         " monotone traces, " + fmt(secs) + " s");
  return o;
}

Outcome stacking_gain() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const StackedFeatures train = make_noisy_expert_features(3000, 101);
  const StackedFeatures val = make_noisy_expert_features(1000, 202);
  auto block_accuracy = [&](std::size_t offset) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < val.size(); ++i)
      hit += argmax_lowest(std::span<const double>(val.rows[i].data() + offset, 6)) ==
             val.labels[i];
    return double(hit) / double(val.size());
  };
  const double block_a = block_accuracy(0), block_b = block_accuracy(6);
  const AblationConfig cfg;
  const double gdn = meta_accuracy(fit_l1_logreg(train, cfg.logreg), val);
  o.require(gdn >= block_a + 0.05, "logreg " + fmt(gdn) + " vs block A " + fmt(block_a));
  o.require(gdn >= block_b + 0.05, "logreg " + fmt(gdn) + " vs block B " + fmt(block_b));
  std::string alternates;
  for (const auto& kind : ablation_classifiers()) {
    if (kind == "logreg") continue;
    const double acc = meta_accuracy(fit_meta(kind, train, cfg), val);
    o.require(gdn >= acc - 0.03, kind + " " + fmt(acc) + " beats logreg " + fmt(gdn));
    alternates += " " + kind + " " + fmt(acc);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60, "took " + fmt(secs) + " s");
  o.note("logreg " + fmt(gdn) + ", blocks " + fmt(block_a) + "/" + fmt(block_b) + ";" +
         alternates + ", " + fmt(secs) + " s");
  return o;
}

// ---------------------------------------------------------- mini pipeline

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::optional<double> report_value(const std::string& report, const std::string& row) {
  std::istringstream in(report);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(row + " ", 0) != 0) continue;
    try {
      return std::stod(line.substr(row.size()));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Pipeline {
  test::TempDir dir;
  fs::path data, prep, run;
  std::string failure;
  double train_seconds = 0;
};

const fs::path kMiniConfig = test::source_dir() / "config" / "mini.toml";

bool run_step(Pipeline& p, const std::string& name, const std::vector<std::string>& args,
              CliRun* result = nullptr) {
  CliRun r = cli(args);
  if (r.code != 0) {
    p.failure = name + " exited " + std::to_string(r.code) + ": " + r.err.substr(0, 300);
    return false;
  }
  if (result) *result = std::move(r);
  return true;
}

bool stack_and_evaluate(Pipeline& p, const fs::path& run, CliRun* eval) {
  return run_step(p, "stack", {"stack", "--run", run.string(), "--config", kMiniConfig.string()}) &&
         run_step(p, "evaluate", {"evaluate", "--run", run.string()}, eval);
}

Outcome end_to_end(Pipeline& p) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  p.data = p.dir / "data";
  p.prep = p.dir / "prep";
  p.run = p.dir / "run";
  FixtureConfig fc;
  fc.images_per_class = 60;
  write_texture_fixture(p.data, fc);
  CliRun eval;
  const bool ok =
      run_step(p, "preprocess",
               {"preprocess", "--data", p.data.string(), "--out", p.prep.string(), "--config",
                kMiniConfig.string()}) &&
      [&] {
        const auto t = std::chrono::steady_clock::now();
        const bool r = run_step(p, "train",
                                {"train", "--split", (p.prep / "split.tsv").string(), "--out",
                                 p.run.string(), "--config", kMiniConfig.string()});
        p.train_seconds = seconds_since(t);
        return r;
      }() &&
      stack_and_evaluate(p, p.run, &eval);
  const double secs = seconds_since(t0);
  if (!ok) {
    o.require(false, p.failure);
    return o;
  }
  const auto g = report_value(eval.out, "googlenet_like");
  const auto d = report_value(eval.out, "densenet_like");
  const auto s = report_value(eval.out, "GDN");
  if (!g || !d || !s) {
    o.require(false, "unparseable evaluation report");
    return o;
  }
  o.require(*g >= 0.90, "googlenet_like val " + fmt(*g));
  o.require(*d >= 0.90, "densenet_like val " + fmt(*d));
  o.require(*s >= std::max(*g, *d) - 0.02, "GDN " + fmt(*s) + " below best base");
  o.require(secs < 300, "took " + fmt(secs) + " s");
  o.note("googlenet_like " + fmt(*g) + ", densenet_like " + fmt(*d) + ", GDN " + fmt(*s) +
         ", " + fmt(secs) + " s total (train " + fmt(p.train_seconds) + " s, " +
         std::to_string(std::thread::hardware_concurrency()) + " cores)");
  return o;
}

const std::vector<std::string> kRunArtifacts = {
    "googlenet.gdnc",           "densenet.gdnc",           "googlenet_history.csv",
    "densenet_history.csv",     "googlenet_train_probs.csv", "densenet_train_probs.csv",
    "googlenet_val_probs.csv",  "densenet_val_probs.csv",  "meta_model.txt",
    "gdn_report.txt",           "evaluation_report.txt"};

std::vector<std::string> differing(const fs::path& a, const fs::path& b) {
  std::vector<std::string> out;
  for (const auto& f : kRunArtifacts) {
    if (!fs::exists(a / f) || !fs::exists(b / f) || slurp(a / f) != slurp(b / f))
      out.push_back(f);
  }
  return out;
}

Outcome determinism(Pipeline& p) {
  Outcome o;
  if (!fs::exists(p.run / "run_manifest.json")) {
    o.require(false, "end-to-end run missing");
    return o;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::string manifest = (p.run / "run_manifest.json").string();
  for (const auto& [name, extra] :
       std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"replay", {}}, {"sequential", {"--sequential"}}}) {
    const fs::path out = p.dir / name;
    std::vector<std::string> args{"train", "--replay", manifest, "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    CliRun eval;
    if (!run_step(p, name + " train", args) || !stack_and_evaluate(p, out, &eval)) {
      o.require(false, p.failure);
      continue;
    }
    const auto diff = differing(p.run, out);
    std::string list;
    for (const auto& f : diff) list += " " + f;
    o.require(diff.empty(), name + " differs in" + list);
  }
  o.note(std::to_string(kRunArtifacts.size()) +
         " artifacts compared for a parallel replay and a sequential replay, " +
         fmt(seconds_since(t0)) + " s");
  return o;
}

Outcome brute_force_equivalence() {
  Outcome o;
  std::size_t checked = 0, mismatches = 0;
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    Rng rng(seed);
    StackedFeatures f;
    const bool integer_grid = seed == 7;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> row(integer_grid ? 4 : 12);
      for (auto& v : row) v = integer_grid ? double(uniform_index(rng, 4)) : uniform(rng, 0, 1);
      f.rows.push_back(row);
      f.labels.push_back(uniform_index(rng, 6));
    }
    std::vector<std::vector<double>> queries = f.rows;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> q(f.dim());
      for (auto& v : q) v = integer_grid ? double(uniform_index(rng, 4)) : uniform(rng, 0, 1);
      queries.push_back(q);
    }
    for (std::size_t k : {1u, 5u, 15u}) {
      const KnnModel m = fit_knn(f, k);
      for (const auto& q : queries) {
        ++checked;
        mismatches += predict_class(m, q) != test::brute_knn(f, k, q);
      }
    }
    for (auto [depth, leaf] : {std::pair<std::size_t, std::size_t>{6, 2}, {3, 1}, {8, 4}}) {
      const DecisionTreeModel t = fit_decision_tree(f, depth, leaf);
      const test::OracleTree oracle{f, depth, leaf};
      for (const auto& q : queries) {
        ++checked;
        mismatches += predict_class(t, q) != oracle(q);
      }
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  o.note(std::to_string(checked) + " predictions compared");
  return o;
}

Outcome shape_anchors() {
  Outcome o;
  o.require(compute_input_size(Family::GoogLeNetLike, 299) == 268203, "googlenet_like 299");
  o.require(compute_input_size(Family::DenseNetLike, 224) == 150528, "densenet_like 224");
  const NetworkSpec spec = full_densenet_spec();
  std::vector<std::pair<std::size_t, std::size_t>> widths;
  std::vector<OpKind> kinds;
  for (const auto& l : describe_head(spec)) {
    kinds.push_back(l.kind);
    if (l.kind == OpKind::Linear) widths.emplace_back(l.in_width, l.out_width);
  }
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{25088, 512}, {512, 256}, {256, 6}};
  o.require(widths == expected, "dense head widths");
  o.require(kinds == std::vector<OpKind>{OpKind::Flatten, OpKind::Linear, OpKind::Relu,
                                         OpKind::Dropout, OpKind::Linear, OpKind::Relu,
                                         OpKind::Dropout, OpKind::Linear, OpKind::Softmax},
            "dense head layer sequence");
  const Shape body = body_output_shape(spec);
  o.require(body[0] * body[1] * body[2] == 25088, "body output does not flatten to 25088");
  o.note("268203 / 150528, head 25088-512-256-6");
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " | " << o.detail << std::endl;
  };

  report("gradient correctness", gradient_correctness);
  report("kernel oracles", kernel_oracles);
  report("cross-entropy oracle", cross_entropy_oracle);
  report("adam oracle", adam_oracle);
  report("l1 logistic solver", l1_logreg_solver);
  report("stacking gain", stacking_gain);
  Pipeline pipeline;
  report("end-to-end mini pipeline", [&] { return end_to_end(pipeline); });
  report("determinism", [&] { return determinism(pipeline); });
  report("brute-force equivalence", brute_force_equivalence);
  report("shape anchors", shape_anchors);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
