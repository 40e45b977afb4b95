#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gdn/trainer.hpp"

namespace gdn {

constexpr std::size_t kStackedDim = 2 * kNumClasses;

// Rows are generic real vectors so the classifiers also run on toy inputs;
// stack_features always produces 12-dimensional rows.
struct StackedFeatures {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  std::vector<std::string> sample_ids;

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }
};

// Joins by sample id, googlenet_like block first, in the order of `google`.
StackedFeatures stack_features(const ProbabilityMatrix& google,
                               const ProbabilityMatrix& dense);

double sigmoid(double z);

// ||w||_1 + C * sum_i log(exp(-y_i (x_i.w + c)) + 1), y_i in {-1, +1}.
double l1_logreg_objective(std::span<const double> w, double c,
                           std::span<const std::vector<double>> x,
                           std::span<const int> y, double C);

struct L1LogRegModel {
  std::vector<std::vector<double>> weights;  // one row per class
  std::vector<double> intercepts;
  double C = 0.02126;
  double tol = 0.1;
  // Objective after every accepted iteration, per class, starting with the
  // value at the zero initialization.
  std::vector<std::vector<double>> objective_trace;

  std::size_t zero_weight_count() const;
};

struct L1LogRegConfig {
  double C = 0.02126;
  double tol = 0.1;
  std::size_t max_iters = 1000;
};

// Binary fit of one (w, c) pair by proximal gradient with backtracking.
// Returns the objective trace; w and c are updated in place.
std::vector<double> fit_l1_binary(std::span<const std::vector<double>> x,
                                  std::span<const int> y, double C, double tol,
                                  std::size_t max_iters, std::vector<double>& w,
                                  double& c);

// One-vs-rest over classes 0..num_classes-1.
L1LogRegModel fit_l1_logreg(const StackedFeatures& f, const L1LogRegConfig& cfg,
                            std::size_t num_classes = kNumClasses);

struct ClassScores {
  std::size_t predicted = 0;
  std::vector<double> scores;      // raw per-class scores
  std::vector<double> normalized;  // scores rescaled to sum to 1
};

ClassScores predict_logreg(const L1LogRegModel& m, std::span<const double> x);

struct LinearOvRModel {
  std::vector<std::vector<double>> weights;
  std::vector<double> biases;
};

struct PerceptronModel {
  LinearOvRModel linear;    // averaged weights used for prediction
  std::size_t epochs = 100;
  std::size_t mistakes = 0;  // total mistakes over training, all classes
};

struct LinearSvmModel {
  LinearOvRModel linear;
  double penalty = 1.0;
  std::size_t epochs = 200;
};

struct KnnModel {
  std::size_t k = 5;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
};

struct TreeNode {
  bool leaf = true;
  std::size_t feature = 0;
  double threshold = 0.0;  // go left when x[feature] <= threshold
  std::size_t left = 0, right = 0;
  std::vector<std::size_t> counts;  // class histogram of training rows
};

struct DecisionTreeModel {
  std::size_t max_depth = 6;
  std::size_t min_leaf = 2;
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

using MetaModel = std::variant<L1LogRegModel, PerceptronModel, LinearSvmModel,
                               KnnModel, DecisionTreeModel>;

std::string meta_kind(const MetaModel& m);

PerceptronModel fit_perceptron(const StackedFeatures& f, std::size_t epochs,
                               std::size_t num_classes = kNumClasses);
LinearSvmModel fit_linear_svm(const StackedFeatures& f, double penalty,
                              std::size_t epochs,
                              std::size_t num_classes = kNumClasses);
KnnModel fit_knn(const StackedFeatures& f, std::size_t k);
DecisionTreeModel fit_decision_tree(const StackedFeatures& f,
                                    std::size_t max_depth, std::size_t min_leaf,
                                    std::size_t num_classes = kNumClasses);

double gini(std::span<const std::size_t> counts);
double hinge_loss(double margin);
// penalty/2 ||w||^2 + mean hinge loss.
double svm_objective(std::span<const double> w, double b,
                     std::span<const std::vector<double>> x,
                     std::span<const int> y, double penalty);

// Argmax with ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> v);

std::size_t predict_class(const MetaModel& m, std::span<const double> x);
std::vector<std::size_t> predict_all(const MetaModel& m,
                                     const StackedFeatures& f);
double meta_accuracy(const MetaModel& m, const StackedFeatures& f);

// Self-describing text artifact: a "gdn-meta 1" header, a kind tag, then
// kind-specific lines with every real printed at full precision.
void write_meta_model(std::ostream& out, const MetaModel& m);
MetaModel read_meta_model(std::istream& in);
void save_meta_model(const std::filesystem::path& path, const MetaModel& m);
MetaModel load_meta_model(const std::filesystem::path& path);

struct AblationConfig {
  L1LogRegConfig logreg;
  std::size_t perceptron_epochs = 100;
  double svm_penalty = 1.0;
  std::size_t svm_epochs = 200;
  std::size_t knn_k = 5;
  std::size_t tree_max_depth = 6;
  std::size_t tree_min_leaf = 2;
};

struct AblationRow {
  std::string classifier;
  std::optional<double> val_accuracy;  // empty when the fit failed
  std::string error;
};

MetaModel fit_meta(const std::string& kind, const StackedFeatures& train,
                   const AblationConfig& cfg);

// Rows come back sorted by accuracy, best first; failed fits last.
std::vector<AblationRow> run_ablation(const StackedFeatures& train,
                                      const StackedFeatures& val,
                                      const AblationConfig& cfg);
std::string format_ablation_table(std::span<const AblationRow> rows);
void write_ablation_csv(const std::filesystem::path& path,
                        std::span<const AblationRow> rows);

const std::vector<std::string>& ablation_classifiers();

// Two 6-class probability blocks per row: block A is a calibrated expert on
// classes 0-2 (peak 0.8 on the true class with probability 0.8) and
// Dirichlet(1) noise elsewhere; block B likewise on classes 3-5.
StackedFeatures make_noisy_expert_features(std::size_t n, std::uint64_t seed);

}  // namespace gdn
