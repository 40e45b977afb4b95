#include "gdn/meta.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "gdn/error.hpp"
#include "gdn/random.hpp"

namespace gdn {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

void require_finite(const StackedFeatures& f) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (double v : f.rows[i]) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite feature value in row " + std::to_string(i));
      }
    }
  }
}

void require_consistent(const StackedFeatures& f) {
  if (f.rows.empty()) throw DataError("no feature rows");
  if (f.labels.size() != f.rows.size()) {
    throw DataError("feature rows and labels differ in count");
  }
  const std::size_t d = f.dim();
  for (const auto& r : f.rows) {
    if (r.size() != d) throw ShapeError("feature rows differ in dimension");
  }
}

std::vector<int> one_vs_rest(const StackedFeatures& f, std::size_t k) {
  std::vector<int> y(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) y[i] = f.labels[i] == k ? 1 : -1;
  return y;
}

std::vector<double> linear_scores(const LinearOvRModel& m,
                                  std::span<const double> x) {
  std::vector<double> s(m.weights.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (m.weights[k].size() != x.size()) {
      throw ShapeError("feature dimension " + std::to_string(x.size()) +
                       " does not match model dimension " +
                       std::to_string(m.weights[k].size()));
    }
    s[k] = dot(m.weights[k], x) + m.biases[k];
  }
  return s;
}

}  // namespace

StackedFeatures stack_features(const ProbabilityMatrix& google,
                               const ProbabilityMatrix& dense) {
  if (google.size() != dense.size()) {
    throw DataError("probability matrices cover different sample counts (" +
                    std::to_string(google.size()) + " vs " +
                    std::to_string(dense.size()) + ")");
  }
  std::unordered_map<std::string, std::size_t> dense_index;
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (!dense_index.emplace(dense.sample_ids[i], i).second) {
      throw DataError("duplicate sample id " + dense.sample_ids[i]);
    }
  }
  StackedFeatures out;
  for (std::size_t i = 0; i < google.size(); ++i) {
    const std::string& id = google.sample_ids[i];
    const auto it = dense_index.find(id);
    if (it == dense_index.end()) {
      throw DataError("sample id " + id + " missing from densenet_like probabilities");
    }
    if (dense.labels[it->second] != google.labels[i]) {
      throw DataError("label disagreement for sample id " + id);
    }
    std::vector<double> row(google.rows[i].begin(), google.rows[i].end());
    row.insert(row.end(), dense.rows[it->second].begin(),
               dense.rows[it->second].end());
    out.rows.push_back(std::move(row));
    out.labels.push_back(google.labels[i]);
    out.sample_ids.push_back(id);
  }
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double l1_logreg_objective(std::span<const double> w, double c,
                           std::span<const std::vector<double>> x,
                           std::span<const int> y, double C) {
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    loss += softplus(-y[i] * (dot(x[i], w) + c));
  }
  return l1 + C * loss;
}

std::size_t L1LogRegModel::zero_weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) {
    n += static_cast<std::size_t>(std::count(w.begin(), w.end(), 0.0));
  }
  return n;
}

std::vector<double> fit_l1_binary(std::span<const std::vector<double>> x,
                                  std::span<const int> y, double C, double tol,
                                  std::size_t max_iters, std::vector<double>& w,
                                  double& c) {
  const std::size_t n = x.size();
  const std::size_t d = w.size();
  auto smooth = [&](std::span<const double> ww, double cc) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += softplus(-y[i] * (dot(x[i], ww) + cc));
    return C * s;
  };
  auto l1 = [](std::span<const double> ww) {
    double s = 0.0;
    for (double v : ww) s += std::abs(v);
    return s;
  };

  double f = smooth(w, c);
  double objective = f + l1(w);
  std::vector<double> trace{objective};
  std::vector<double> gw(d), cand(d);
  double step = 1.0;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = dot(x[i], w) + c;
      const double g = -y[i] * C * sigmoid(-y[i] * m);
      for (std::size_t j = 0; j < d; ++j) gw[j] += g * x[i][j];
      gc += g;
    }
    step *= 2.0;
    bool accepted = false;
    double cand_c = c, cand_f = f;
    while (step > 1e-300) {
      for (std::size_t j = 0; j < d; ++j) {
        const double z = w[j] - step * gw[j];
        cand[j] = std::copysign(std::max(std::abs(z) - step, 0.0), z);
      }
      cand_c = c - step * gc;
      cand_f = smooth(cand, cand_c);
      double lin = (cand_c - c) * gc, sq = (cand_c - c) * (cand_c - c);
      for (std::size_t j = 0; j < d; ++j) {
        const double delta = cand[j] - w[j];
        lin += gw[j] * delta;
        sq += delta * delta;
      }
      if (cand_f <= f + lin + sq / (2.0 * step)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double cand_objective = cand_f + l1(cand);
    if (cand_objective > objective) break;
    const double rel =
        (objective - cand_objective) / std::max(std::abs(objective), 1e-300);
    w = cand;
    c = cand_c;
    f = cand_f;
    objective = cand_objective;
    trace.push_back(objective);
    if (rel < tol) break;
  }
  return trace;
}

L1LogRegModel fit_l1_logreg(const StackedFeatures& f, const L1LogRegConfig& cfg,
                            std::size_t num_classes) {
  require_consistent(f);
  require_finite(f);
  if (!(cfg.C > 0.0)) throw UsageError("logistic C must be > 0");
  if (!(cfg.tol > 0.0)) throw UsageError("logistic tol must be > 0");
  std::vector<bool> present(num_classes, false);
  for (std::size_t l : f.labels) {
    if (l >= num_classes) throw DataError("label out of range: " + std::to_string(l));
    present[l] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw DataError("logistic regression needs at least 2 classes in the labels");
  }
  L1LogRegModel m;
  m.C = cfg.C;
  m.tol = cfg.tol;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto y = one_vs_rest(f, k);
    std::vector<double> w(f.dim(), 0.0);
    double c = 0.0;
    m.objective_trace.push_back(
        fit_l1_binary(f.rows, y, cfg.C, cfg.tol, cfg.max_iters, w, c));
    m.weights.push_back(std::move(w));
    m.intercepts.push_back(c);
  }
  return m;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

ClassScores predict_logreg(const L1LogRegModel& m, std::span<const double> x) {
  ClassScores out;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    if (m.weights[k].size() != x.size()) {
      throw ShapeError("feature dimension " + std::to_string(x.size()) +
                       " does not match model dimension " +
                       std::to_string(m.weights[k].size()));
    }
    out.scores.push_back(sigmoid(dot(m.weights[k], x) + m.intercepts[k]));
  }
  out.predicted = argmax_lowest(out.scores);
  const double total = std::accumulate(out.scores.begin(), out.scores.end(), 0.0);
  for (double s : out.scores) {
    out.normalized.push_back(total > 0.0 ? s / total
                                         : 1.0 / static_cast<double>(out.scores.size()));
  }
  return out;
}

PerceptronModel fit_perceptron(const StackedFeatures& f, std::size_t epochs,
                               std::size_t num_classes) {
  require_consistent(f);
  PerceptronModel m;
  m.epochs = epochs;
  const std::size_t d = f.dim();
  const double steps = static_cast<double>(epochs * f.size());
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto y = one_vs_rest(f, k);
    std::vector<double> w(d, 0.0), w_sum(d, 0.0);
    double b = 0.0, b_sum = 0.0;
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (y[i] * (dot(w, f.rows[i]) + b) <= 0.0) {
          for (std::size_t j = 0; j < d; ++j) w[j] += y[i] * f.rows[i][j];
          b += y[i];
          ++m.mistakes;
        }
        for (std::size_t j = 0; j < d; ++j) w_sum[j] += w[j];
        b_sum += b;
      }
    }
    if (steps > 0) {
      for (double& v : w_sum) v /= steps;
      b_sum /= steps;
    }
    m.linear.weights.push_back(std::move(w_sum));
    m.linear.biases.push_back(b_sum);
  }
  return m;
}

double hinge_loss(double margin) { return std::max(0.0, 1.0 - margin); }

double svm_objective(std::span<const double> w, double b,
                     std::span<const std::vector<double>> x,
                     std::span<const int> y, double penalty) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    loss += hinge_loss(y[i] * (dot(x[i], w) + b));
  }
  return 0.5 * penalty * dot(w, w) + loss / static_cast<double>(x.size());
}

LinearSvmModel fit_linear_svm(const StackedFeatures& f, double penalty,
                              std::size_t epochs, std::size_t num_classes) {
  require_consistent(f);
  if (!(penalty > 0.0)) throw UsageError("SVM penalty must be > 0");
  LinearSvmModel m;
  m.penalty = penalty;
  m.epochs = epochs;
  const std::size_t d = f.dim();
  const double n = static_cast<double>(f.size());
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto y = one_vs_rest(f, k);
    std::vector<double> w(d, 0.0), gw(d);
    double b = 0.0;
    std::vector<double> best_w = w;
    double best_b = b;
    double best = svm_objective(w, b, f.rows, y, penalty);
    for (std::size_t t = 1; t <= epochs; ++t) {
      for (std::size_t j = 0; j < d; ++j) gw[j] = penalty * w[j];
      double gb = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (y[i] * (dot(w, f.rows[i]) + b) < 1.0) {
          for (std::size_t j = 0; j < d; ++j) gw[j] -= y[i] * f.rows[i][j] / n;
          gb -= y[i] / n;
        }
      }
      const double eta = 1.0 / (penalty * static_cast<double>(t));
      for (std::size_t j = 0; j < d; ++j) w[j] -= eta * gw[j];
      b -= eta * gb;
      const double obj = svm_objective(w, b, f.rows, y, penalty);
      if (obj < best) {
        best = obj;
        best_w = w;
        best_b = b;
      }
    }
    m.linear.weights.push_back(std::move(best_w));
    m.linear.biases.push_back(best_b);
  }
  return m;
}

KnnModel fit_knn(const StackedFeatures& f, std::size_t k) {
  require_consistent(f);
  if (k < 1 || k > f.size()) {
    throw UsageError("k must lie in [1, " + std::to_string(f.size()) + "]");
  }
  return {k, f.rows, f.labels};
}

double gini(std::span<const std::size_t> counts) {
  const double n =
      static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (n == 0.0) return 0.0;
  double s = 1.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / n;
    s -= p * p;
  }
  return s;
}

namespace {

struct TreeBuilder {
  const StackedFeatures& f;
  std::size_t num_classes;
  std::size_t max_depth;
  std::size_t min_leaf;
  std::vector<TreeNode> nodes;

  std::vector<std::size_t> histogram(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i : idx) ++counts[f.labels[i]];
    return counts;
  }

  std::size_t build(std::vector<std::size_t> idx, std::size_t depth) {
    const std::size_t id = nodes.size();
    nodes.push_back({});
    nodes[id].counts = histogram(idx);
    const double parent = gini(nodes[id].counts);
    if (depth >= max_depth || parent == 0.0 || idx.size() < 2 * min_leaf) {
      return id;
    }
    const std::size_t n = idx.size();
    double best = parent;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    bool found = false;
    for (std::size_t j = 0; j < f.dim(); ++j) {
      std::vector<std::size_t> order = idx;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return f.rows[a][j] < f.rows[b][j];
      });
      std::vector<std::size_t> left(num_classes, 0), right = nodes[id].counts;
      for (std::size_t pos = 0; pos + 1 < n; ++pos) {
        const std::size_t i = order[pos];
        ++left[f.labels[i]];
        --right[f.labels[i]];
        const double lo = f.rows[i][j];
        const double hi = f.rows[order[pos + 1]][j];
        if (lo == hi) continue;
        const std::size_t nl = pos + 1, nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double score = (static_cast<double>(nl) * gini(left) +
                              static_cast<double>(nr) * gini(right)) /
                             static_cast<double>(n);
        if (score < best - 1e-12) {
          best = score;
          best_feature = j;
          best_threshold = lo + (hi - lo) / 2.0;
          found = true;
        }
      }
    }
    if (!found) return id;
    std::vector<std::size_t> li, ri;
    for (std::size_t i : idx) {
      (f.rows[i][best_feature] <= best_threshold ? li : ri).push_back(i);
    }
    const std::size_t l = build(std::move(li), depth + 1);
    const std::size_t r = build(std::move(ri), depth + 1);
    nodes[id].leaf = false;
    nodes[id].feature = best_feature;
    nodes[id].threshold = best_threshold;
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  }
};

std::size_t majority(std::span<const std::size_t> counts) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > counts[best]) best = k;
  }
  return best;
}

}  // namespace

DecisionTreeModel fit_decision_tree(const StackedFeatures& f,
                                    std::size_t max_depth, std::size_t min_leaf,
                                    std::size_t num_classes) {
  require_consistent(f);
  if (max_depth < 1) throw UsageError("tree max_depth must be >= 1");
  if (min_leaf < 1) throw UsageError("tree min_leaf must be >= 1");
  for (std::size_t l : f.labels) {
    if (l >= num_classes) throw DataError("label out of range: " + std::to_string(l));
  }
  TreeBuilder builder{f, num_classes, max_depth, min_leaf, {}};
  std::vector<std::size_t> all(f.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  builder.build(std::move(all), 0);
  return {max_depth, min_leaf, std::move(builder.nodes)};
}

std::string meta_kind(const MetaModel& m) {
  static const char* names[] = {"logreg", "perceptron", "svm", "knn", "tree"};
  return names[m.index()];
}

std::size_t predict_class(const MetaModel& m, std::span<const double> x) {
  struct Visitor {
    std::span<const double> x;
    std::size_t operator()(const L1LogRegModel& v) const {
      return predict_logreg(v, x).predicted;
    }
    std::size_t operator()(const PerceptronModel& v) const {
      return argmax_lowest(linear_scores(v.linear, x));
    }
    std::size_t operator()(const LinearSvmModel& v) const {
      return argmax_lowest(linear_scores(v.linear, x));
    }
    std::size_t operator()(const KnnModel& v) const {
      std::vector<std::pair<double, std::size_t>> dist;
      dist.reserve(v.rows.size());
      for (std::size_t i = 0; i < v.rows.size(); ++i) {
        if (v.rows[i].size() != x.size()) throw ShapeError("KNN dimension mismatch");
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
          const double dlt = v.rows[i][j] - x[j];
          s += dlt * dlt;
        }
        dist.emplace_back(s, i);
      }
      const std::size_t k = std::min(v.k, dist.size());
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                        dist.end());
      std::size_t classes = 0;
      for (std::size_t l : v.labels) classes = std::max(classes, l + 1);
      std::vector<std::size_t> votes(std::max(classes, kNumClasses), 0);
      for (std::size_t i = 0; i < k; ++i) ++votes[v.labels[dist[i].second]];
      return majority(votes);
    }
    std::size_t operator()(const DecisionTreeModel& v) const {
      std::size_t node = 0;
      while (!v.nodes[node].leaf) {
        const auto& n = v.nodes[node];
        if (n.feature >= x.size()) throw ShapeError("tree dimension mismatch");
        node = x[n.feature] <= n.threshold ? n.left : n.right;
      }
      return majority(v.nodes[node].counts);
    }
  };
  return std::visit(Visitor{x}, m);
}

std::vector<std::size_t> predict_all(const MetaModel& m,
                                     const StackedFeatures& f) {
  std::vector<std::size_t> out;
  out.reserve(f.size());
  for (const auto& row : f.rows) out.push_back(predict_class(m, row));
  return out;
}

double meta_accuracy(const MetaModel& m, const StackedFeatures& f) {
  return accuracy_from_predictions(predict_all(m, f), f.labels);
}

namespace {

void write_reals(std::ostream& out, std::span<const double> v) {
  for (double x : v) out << ' ' << format_double(x);
}

void write_linear(std::ostream& out, const LinearOvRModel& m) {
  out << "classes " << m.weights.size() << '\n';
  out << "dim " << (m.weights.empty() ? 0 : m.weights.front().size()) << '\n';
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    out << "class " << k << ' ' << format_double(m.biases[k]);
    write_reals(out, m.weights[k]);
    out << '\n';
  }
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::vector<std::string> next(const std::string& expect) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      for (std::string t; ss >> t;) tokens.push_back(t);
      if (tokens.front() != expect) {
        fail("expected '" + expect + "', found '" + tokens.front() + "'");
      }
      return tokens;
    }
    fail("unexpected end of file, expected '" + expect + "'");
  }

  double real(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad number '" + s + "'");
    return v;
  }
  std::size_t count(const std::string& s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail("bad integer '" + s + "'");
    return v;
  }
  double key_real(const std::string& key) {
    const auto t = next(key);
    if (t.size() != 2) fail(key + " takes one value");
    return real(t[1]);
  }
  std::size_t key_count(const std::string& key) {
    const auto t = next(key);
    if (t.size() != 2) fail(key + " takes one value");
    return count(t[1]);
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("meta model line " + std::to_string(line_no_) + ": " + why);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

LinearOvRModel read_linear(LineReader& r) {
  LinearOvRModel m;
  const std::size_t classes = r.key_count("classes");
  const std::size_t dim = r.key_count("dim");
  for (std::size_t k = 0; k < classes; ++k) {
    const auto t = r.next("class");
    if (t.size() != 3 + dim || r.count(t[1]) != k) r.fail("malformed class line");
    m.biases.push_back(r.real(t[2]));
    std::vector<double> w;
    for (std::size_t j = 0; j < dim; ++j) w.push_back(r.real(t[3 + j]));
    m.weights.push_back(std::move(w));
  }
  return m;
}

}  // namespace

void write_meta_model(std::ostream& out, const MetaModel& model) {
  out << "gdn-meta 1\n" << "kind " << meta_kind(model) << '\n';
  if (const auto* m = std::get_if<L1LogRegModel>(&model)) {
    out << "C " << format_double(m->C) << '\n' << "tol " << format_double(m->tol) << '\n';
    write_linear(out, {m->weights, m->intercepts});
  } else if (const auto* m = std::get_if<PerceptronModel>(&model)) {
    out << "epochs " << m->epochs << '\n' << "mistakes " << m->mistakes << '\n';
    write_linear(out, m->linear);
  } else if (const auto* m = std::get_if<LinearSvmModel>(&model)) {
    out << "penalty " << format_double(m->penalty) << '\n'
        << "epochs " << m->epochs << '\n';
    write_linear(out, m->linear);
  } else if (const auto* m = std::get_if<KnnModel>(&model)) {
    out << "k " << m->k << '\n' << "rows " << m->rows.size() << '\n'
        << "dim " << (m->rows.empty() ? 0 : m->rows.front().size()) << '\n';
    for (std::size_t i = 0; i < m->rows.size(); ++i) {
      out << "row " << m->labels[i];
      write_reals(out, m->rows[i]);
      out << '\n';
    }
  } else if (const auto* m = std::get_if<DecisionTreeModel>(&model)) {
    out << "max_depth " << m->max_depth << '\n' << "min_leaf " << m->min_leaf << '\n'
        << "nodes " << m->nodes.size() << '\n';
    for (const auto& n : m->nodes) {
      out << "node " << (n.leaf ? "leaf" : "split") << ' ' << n.feature << ' '
          << format_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
          << n.counts.size();
      for (std::size_t c : n.counts) out << ' ' << c;
      out << '\n';
    }
  }
}

MetaModel read_meta_model(std::istream& in) {
  LineReader r(in);
  const auto header = r.next("gdn-meta");
  if (header.size() != 2 || header[1] != "1") r.fail("unsupported meta model version");
  const auto kind_line = r.next("kind");
  if (kind_line.size() != 2) r.fail("kind takes one value");
  const std::string& kind = kind_line[1];
  if (kind == "logreg") {
    L1LogRegModel m;
    m.C = r.key_real("C");
    m.tol = r.key_real("tol");
    auto lin = read_linear(r);
    m.weights = std::move(lin.weights);
    m.intercepts = std::move(lin.biases);
    return m;
  }
  if (kind == "perceptron") {
    PerceptronModel m;
    m.epochs = r.key_count("epochs");
    m.mistakes = r.key_count("mistakes");
    m.linear = read_linear(r);
    return m;
  }
  if (kind == "svm") {
    LinearSvmModel m;
    m.penalty = r.key_real("penalty");
    m.epochs = r.key_count("epochs");
    m.linear = read_linear(r);
    return m;
  }
  if (kind == "knn") {
    KnnModel m;
    m.k = r.key_count("k");
    const std::size_t rows = r.key_count("rows");
    const std::size_t dim = r.key_count("dim");
    for (std::size_t i = 0; i < rows; ++i) {
      const auto t = r.next("row");
      if (t.size() != 2 + dim) r.fail("malformed row line");
      m.labels.push_back(r.count(t[1]));
      std::vector<double> row;
      for (std::size_t j = 0; j < dim; ++j) row.push_back(r.real(t[2 + j]));
      m.rows.push_back(std::move(row));
    }
    if (m.k < 1 || m.k > m.rows.size()) r.fail("k outside [1, rows]");
    return m;
  }
  if (kind == "tree") {
    DecisionTreeModel m;
    m.max_depth = r.key_count("max_depth");
    m.min_leaf = r.key_count("min_leaf");
    const std::size_t count = r.key_count("nodes");
    for (std::size_t i = 0; i < count; ++i) {
      const auto t = r.next("node");
      if (t.size() < 7) r.fail("malformed node line");
      TreeNode n;
      if (t[1] != "leaf" && t[1] != "split") r.fail("node type must be leaf or split");
      n.leaf = t[1] == "leaf";
      n.feature = r.count(t[2]);
      n.threshold = r.real(t[3]);
      n.left = r.count(t[4]);
      n.right = r.count(t[5]);
      const std::size_t classes = r.count(t[6]);
      if (t.size() != 7 + classes) r.fail("malformed node histogram");
      for (std::size_t k = 0; k < classes; ++k) n.counts.push_back(r.count(t[7 + k]));
      if (!n.leaf && (n.left >= count || n.right >= count || n.left <= i || n.right <= i)) {
        r.fail("node child index out of range");
      }
      m.nodes.push_back(std::move(n));
    }
    if (m.nodes.empty()) r.fail("tree has no nodes");
    return m;
  }
  r.fail("unknown meta model kind '" + kind + "'");
}

void save_meta_model(const std::filesystem::path& path, const MetaModel& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_meta_model(out, m);
}

MetaModel load_meta_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open meta model " + path.string());
  try {
    return read_meta_model(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const std::vector<std::string>& ablation_classifiers() {
  static const std::vector<std::string> names{"logreg", "perceptron", "svm", "knn",
                                              "tree"};
  return names;
}

MetaModel fit_meta(const std::string& kind, const StackedFeatures& train,
                   const AblationConfig& cfg) {
  if (kind == "logreg") return fit_l1_logreg(train, cfg.logreg);
  if (kind == "perceptron") return fit_perceptron(train, cfg.perceptron_epochs);
  if (kind == "svm") return fit_linear_svm(train, cfg.svm_penalty, cfg.svm_epochs);
  if (kind == "knn") return fit_knn(train, cfg.knn_k);
  if (kind == "tree") {
    return fit_decision_tree(train, cfg.tree_max_depth, cfg.tree_min_leaf);
  }
  throw UsageError("unknown meta classifier '" + kind + "'");
}

std::vector<AblationRow> run_ablation(const StackedFeatures& train,
                                      const StackedFeatures& val,
                                      const AblationConfig& cfg) {
  std::vector<AblationRow> rows;
  for (const auto& name : ablation_classifiers()) {
    AblationRow row{name, std::nullopt, {}};
    try {
      row.val_accuracy = meta_accuracy(fit_meta(name, train, cfg), val);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.val_accuracy.has_value() != b.val_accuracy.has_value()) {
      return a.val_accuracy.has_value();
    }
    return a.val_accuracy.value_or(0.0) > b.val_accuracy.value_or(0.0);
  });
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "classifier" << "val_accuracy\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.classifier;
    if (r.val_accuracy) {
      out << std::fixed << std::setprecision(1) << 100.0 * *r.val_accuracy << "%\n";
    } else {
      out << "failed: " << r.error << '\n';
    }
  }
  return out.str();
}

void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const AblationRow> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "classifier,val_accuracy\n";
  for (const auto& r : rows) {
    out << r.classifier << ',' << (r.val_accuracy ? format_double(*r.val_accuracy) : "")
        << '\n';
  }
}

namespace {

// Dirichlet(1) over `n` entries scaled to sum to `mass`.
std::vector<double> flat_dirichlet(std::size_t n, double mass, Rng& rng) {
  std::vector<double> v(n);
  double total = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - uniform01(rng));
    total += x;
  }
  for (double& x : v) x = mass * x / total;
  return v;
}

std::array<double, kNumClasses> expert_block(std::size_t label,
                                             std::size_t domain_start, Rng& rng) {
  std::array<double, kNumClasses> block{};
  const bool in_domain = label >= domain_start && label < domain_start + 3;
  if (!in_domain) {
    const auto v = flat_dirichlet(kNumClasses, 1.0, rng);
    std::copy(v.begin(), v.end(), block.begin());
    return block;
  }
  std::size_t peak = label;
  if (uniform01(rng) >= 0.8) {
    const std::size_t other = static_cast<std::size_t>(uniform_index(rng, 2));
    std::size_t slot = 0;
    for (std::size_t c = domain_start; c < domain_start + 3; ++c) {
      if (c == label) continue;
      if (slot++ == other) peak = c;
    }
  }
  const auto rest = flat_dirichlet(kNumClasses - 1, 0.2, rng);
  for (std::size_t c = 0, j = 0; c < kNumClasses; ++c) {
    block[c] = c == peak ? 0.8 : rest[j++];
  }
  return block;
}

}  // namespace

StackedFeatures make_noisy_expert_features(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  StackedFeatures f;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::size_t>(uniform_index(rng, kNumClasses));
    const auto a = expert_block(label, 0, rng);
    const auto b = expert_block(label, 3, rng);
    std::vector<double> row(a.begin(), a.end());
    row.insert(row.end(), b.begin(), b.end());
    f.rows.push_back(std::move(row));
    f.labels.push_back(label);
    f.sample_ids.push_back("synthetic/" + std::to_string(i));
  }
  return f;
}

}  // namespace gdn
