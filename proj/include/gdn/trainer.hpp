#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gdn/augment.hpp"
#include "gdn/dataset.hpp"
#include "gdn/model_zoo.hpp"

namespace gdn {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 16;
  std::size_t epochs_per_round = 50;
  std::size_t max_rounds = 6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double target_accuracy = 0.70;
  double overfit_gap = 0.15;

  // Throws UsageError on lr <= 0, betas outside 0 < b1 < b2 < 1, zero
  // epochs_per_round, max_rounds or batch_size.
  void validate() const;
};

// Library defaults per family: learning rates 0.001 / 0.01, 6 / 5 rounds,
// batch size 16.
TrainConfig default_train_config(Family family);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;  // steps taken
};

// One Adam update of a flat parameter block at step t >= 1.
void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::size_t t,
                 const TrainConfig& cfg);

// Increments state.t and applies adam_update to every parameter using its
// grad slot. Moments are allocated on first use.
void adam_step(ParameterStore& params, AdamState& state,
               const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

// Train mode: per batch, zero grads, forward every sample with its own
// dropout stream, backward with seed 1/B, one Adam step, then round the
// parameters to float storage. Eval mode: forward and loss only.
// Throws DivergenceError on a non-finite loss or parameter.
EpochStats run_epoch(Model& model, std::span<const Batch> batches, Mode mode,
                     AdamState* state, const TrainConfig& cfg,
                     std::uint64_t dropout_seed);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy_from_predictions(std::span<const std::size_t> predicted,
                                 std::span<const std::size_t> labels);
double evaluate_accuracy(const Model& model,
                         std::span<const LabeledImage> part,
                         const AugmentConfig& augment);

enum class RoundDecision { Continue, StopOverfit, StopConverged, StopMaxRounds };
std::string decision_name(RoundDecision d);

// Called after each completed round. `history` holds every epoch so far.
RoundDecision round_controller(std::span<const EpochRecord> history,
                               const TrainConfig& cfg);

struct TrainJob {
  NetworkSpec spec;
  TrainConfig config;
  AugmentConfig augment;
};

struct TrainProgress {
  std::string model;  // family name
  EpochRecord record;
  std::optional<RoundDecision> decision;  // set at round boundaries
};

// Thread-safe FIFO used by concurrent trainers to report progress.
class ProgressChannel {
 public:
  void send(TrainProgress p);
  // Blocks until a message arrives or every sender has closed.
  std::optional<TrainProgress> receive();
  void add_sender();
  void close_sender();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TrainProgress> queue_;
  std::size_t open_senders_ = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t rounds_run = 0;
  RoundDecision final_decision = RoundDecision::Continue;
};

// Trains one model round by round until the controller stops it. When
// fixed_rounds is set the controller is bypassed and exactly that many
// rounds run.
TrainResult train_model(const TrainJob& job, const DatasetSplit& data,
                        ProgressChannel* progress = nullptr,
                        std::optional<std::size_t> fixed_rounds = std::nullopt);

// Runs both jobs on their own threads over the shared read-only split.
// If either diverges the other is still joined and the first failure is
// rethrown with the model name attached.
std::vector<TrainResult> train_base_models_parallel(
    std::span<const TrainJob> jobs, const DatasetSplit& data,
    ProgressChannel* progress = nullptr);
std::vector<TrainResult> train_base_models_sequential(
    std::span<const TrainJob> jobs, const DatasetSplit& data,
    ProgressChannel* progress = nullptr);

struct ProbabilityMatrix {
  std::vector<std::string> sample_ids;
  std::vector<std::size_t> labels;
  std::vector<std::array<double, kNumClasses>> rows;

  std::size_t size() const { return rows.size(); }
};

// Eval-mode probabilities for every sample of `part`, in order.
ProbabilityMatrix export_probabilities(const Model& model,
                                       std::span<const LabeledImage> part,
                                       const AugmentConfig& augment);

// Out-of-fold probabilities for `train`: split into `folds` stratified
// folds, refit a fresh model on the rest for `rounds` rounds each, and
// predict the held-out fold. Rows come back in the order of `train`.
ProbabilityMatrix out_of_fold_probabilities(const TrainJob& job,
                                            std::span<const LabeledImage> train,
                                            std::size_t folds,
                                            std::size_t rounds);

void write_probability_csv(const std::filesystem::path& path,
                           const ProbabilityMatrix& m);
ProbabilityMatrix read_probability_csv(const std::filesystem::path& path);
void write_history_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v);

}  // namespace gdn
