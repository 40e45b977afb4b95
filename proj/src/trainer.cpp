#include "gdn/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <utility>

#include "gdn/error.hpp"
#include "gdn/ops.hpp"

namespace gdn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < adam_beta2 && adam_beta2 < 1.0)) {
    throw UsageError("Adam betas must satisfy 0 < beta1 < beta2 < 1");
  }
  if (!(adam_epsilon > 0.0)) throw UsageError("adam_epsilon must be > 0");
  if (epochs_per_round == 0) throw UsageError("epochs_per_round must be >= 1");
  if (max_rounds == 0) throw UsageError("max_rounds must be >= 1");
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    throw UsageError("target_accuracy must lie in [0, 1]");
  }
}

TrainConfig default_train_config(Family family) {
  TrainConfig cfg;
  if (family == Family::GoogLeNetLike) {
    cfg.learning_rate = 0.001;
    cfg.max_rounds = 6;
  } else {
    cfg.learning_rate = 0.01;
    cfg.max_rounds = 5;
  }
  return cfg;
}

void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::size_t t,
                 const TrainConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw UsageError("adam_update: step index starts at 1");
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
  }
}

void adam_step(ParameterStore& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params[i].size(), 0.0);
      state.v.emplace_back(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameters");
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    adam_update(p.values(), std::as_const(p).grad(), state.m[i], state.v[i], state.t,
                cfg);
  }
}

EpochStats run_epoch(Model& model, std::span<const Batch> batches, Mode mode,
                     AdamState* state, const TrainConfig& cfg,
                     std::uint64_t dropout_seed) {
  if (batches.empty()) throw UsageError("run_epoch: no batches");
  if (mode == Mode::Train && state == nullptr) {
    throw UsageError("run_epoch: train mode needs optimizer state");
  }
  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch& batch = batches[bi];
    const std::size_t b = batch.labels.size();
    if (mode == Mode::Train) model.params().zero_grads();
    for (std::size_t k = 0; k < b; ++k) {
      const ForwardContext ctx{mode, derive_seed(dropout_seed, batch.indices[k]),
                               batch.labels[k]};
      const Evaluation ev =
          forward(model.graph(), model.params(), batch_item(batch.images, k), ctx);
      const double loss = ev.value(model.loss_node())[0];
      if (!std::isfinite(loss)) {
        throw DivergenceError(family_name(model.spec().family) +
                              ": non-finite loss at batch " + std::to_string(bi));
      }
      loss_sum += loss;
      if (ops::argmax(ev.value(model.probs_node()).values()) == batch.labels[k]) ++correct;
      if (mode == Mode::Train) {
        backward(model.graph(), ev, model.loss_node(), model.params(),
                 1.0 / static_cast<double>(b));
      }
    }
    stats.samples += b;
    if (mode == Mode::Train) {
      adam_step(model.params(), *state, cfg);
      model.params().round_to_storage_precision();
      if (!model.params().all_finite()) {
        throw DivergenceError(family_name(model.spec().family) +
                              ": non-finite parameter after batch " +
                              std::to_string(bi));
      }
    }
  }
  stats.loss = loss_sum / static_cast<double>(stats.samples);
  stats.accuracy =
      static_cast<double>(correct) / static_cast<double>(stats.samples);
  return stats;
}

double accuracy_from_predictions(std::span<const std::size_t> predicted,
                                 std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size()) {
    throw ShapeError("accuracy: prediction and label counts differ");
  }
  if (labels.empty()) throw UsageError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const Model& model, std::span<const LabeledImage> part,
                         const AugmentConfig& augment) {
  std::vector<std::size_t> predicted, labels;
  Rng unused(0);
  for (const auto& img : part) {
    const Tensor x = gdn::augment(img.pixels, augment, Mode::Eval, unused);
    predicted.push_back(ops::argmax(model.predict(x).values()));
    labels.push_back(img.label);
  }
  return accuracy_from_predictions(predicted, labels);
}

std::string decision_name(RoundDecision d) {
  switch (d) {
    case RoundDecision::Continue: return "continue";
    case RoundDecision::StopOverfit: return "stop_overfit";
    case RoundDecision::StopConverged: return "stop_converged";
    case RoundDecision::StopMaxRounds: return "stop_max_rounds";
  }
  return "?";
}

RoundDecision round_controller(std::span<const EpochRecord> history,
                               const TrainConfig& cfg) {
  const std::size_t per = cfg.epochs_per_round;
  if (history.empty() || history.size() % per != 0) {
    throw UsageError("round_controller: history is not at a round boundary");
  }
  const std::size_t rounds = history.size() / per;
  if (rounds >= cfg.max_rounds) return RoundDecision::StopMaxRounds;

  const auto round = history.subspan(history.size() - per);
  double best_train = 0.0, best_val = 0.0;
  for (const auto& r : round) {
    best_train = std::max(best_train, r.train_accuracy);
    best_val = std::max(best_val, r.val_accuracy);
  }
  // Val accuracy where the round started: the previous round's last epoch,
  // or the first epoch when this is round one.
  const double start = history.size() > per
                           ? history[history.size() - per - 1].val_accuracy
                           : round.front().val_accuracy;
  const double end = round.back().val_accuracy;
  if (best_train - best_val > cfg.overfit_gap && end < start) {
    return RoundDecision::StopOverfit;
  }
  if (end < cfg.target_accuracy) return RoundDecision::Continue;
  if (end - start < 0.005) return RoundDecision::StopConverged;
  return RoundDecision::Continue;
}

void ProgressChannel::send(TrainProgress p) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(p));
  }
  cv_.notify_one();
}

std::optional<TrainProgress> ProgressChannel::receive() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !queue_.empty() || open_senders_ == 0; });
  if (queue_.empty()) return std::nullopt;
  TrainProgress p = std::move(queue_.front());
  queue_.pop_front();
  return p;
}

void ProgressChannel::add_sender() {
  std::lock_guard lock(mu_);
  ++open_senders_;
}

void ProgressChannel::close_sender() {
  {
    std::lock_guard lock(mu_);
    if (open_senders_ > 0) --open_senders_;
  }
  cv_.notify_all();
}

namespace {

std::vector<Batch> eval_batches(std::span<const LabeledImage> part,
                                const AugmentConfig& augment,
                                std::size_t batch_size) {
  return make_batches(part, augment, Mode::Eval, batch_size, 0);
}

}  // namespace

TrainResult train_model(const TrainJob& job, const DatasetSplit& data,
                        ProgressChannel* progress,
                        std::optional<std::size_t> fixed_rounds) {
  const TrainConfig& cfg = job.config;
  cfg.validate();
  job.augment.validate();
  if (data.train.empty()) throw DataError("training split is empty");

  TrainResult result{build_network(job.spec, derive_seed(cfg.seed, 0)), {}, 0,
                     RoundDecision::Continue};
  const std::string name = family_name(job.spec.family);
  const auto val = eval_batches(data.val, job.augment, cfg.batch_size);
  AdamState state;
  std::size_t epoch = 0;
  for (;;) {
    for (std::size_t e = 0; e < cfg.epochs_per_round; ++e, ++epoch) {
      const auto train = make_batches(data.train, job.augment, Mode::Train,
                                      cfg.batch_size, derive_seed(cfg.seed, 1, epoch));
      const EpochStats tr = run_epoch(result.model, train, Mode::Train, &state,
                                      cfg, derive_seed(cfg.seed, 2, epoch));
      EpochRecord rec{epoch + 1, tr.loss, tr.accuracy, 0.0, 0.0};
      if (!val.empty()) {
        const EpochStats va =
            run_epoch(result.model, val, Mode::Eval, nullptr, cfg, 0);
        rec.val_loss = va.loss;
        rec.val_accuracy = va.accuracy;
      }
      result.history.push_back(rec);
      const bool boundary = e + 1 == cfg.epochs_per_round;
      if (progress && !boundary) progress->send({name, rec, std::nullopt});
    }
    ++result.rounds_run;
    if (fixed_rounds) {
      result.final_decision = result.rounds_run >= *fixed_rounds
                                  ? RoundDecision::StopMaxRounds
                                  : RoundDecision::Continue;
    } else {
      result.final_decision = round_controller(result.history, cfg);
    }
    if (progress) {
      progress->send({name, result.history.back(), result.final_decision});
    }
    if (result.final_decision != RoundDecision::Continue) break;
  }
  return result;
}

std::vector<TrainResult> train_base_models_parallel(
    std::span<const TrainJob> jobs, const DatasetSplit& data,
    ProgressChannel* progress) {
  std::vector<std::optional<TrainResult>> slots(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::vector<std::thread> threads;
  if (progress) {
    for (std::size_t i = 0; i < jobs.size(); ++i) progress->add_sender();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        slots[i].emplace(train_model(jobs[i], data, progress));
      } catch (...) {
        errors[i] = std::current_exception();
      }
      if (progress) progress->close_sender();
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const DivergenceError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(family_name(jobs[i].spec.family) + ": " + e.what());
    }
  }
  std::vector<TrainResult> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<TrainResult> train_base_models_sequential(
    std::span<const TrainJob> jobs, const DatasetSplit& data,
    ProgressChannel* progress) {
  std::vector<TrainResult> out;
  for (const auto& job : jobs) out.push_back(train_model(job, data, progress));
  return out;
}

ProbabilityMatrix export_probabilities(const Model& model,
                                       std::span<const LabeledImage> part,
                                       const AugmentConfig& augment) {
  ProbabilityMatrix m;
  Rng unused(0);
  for (const auto& img : part) {
    const Tensor p =
        model.predict(gdn::augment(img.pixels, augment, Mode::Eval, unused));
    std::array<double, kNumClasses> row{};
    std::copy(p.values().begin(), p.values().end(), row.begin());
    m.sample_ids.push_back(img.source_id);
    m.labels.push_back(img.label);
    m.rows.push_back(row);
  }
  return m;
}

ProbabilityMatrix out_of_fold_probabilities(const TrainJob& job,
                                            std::span<const LabeledImage> train,
                                            std::size_t folds,
                                            std::size_t rounds) {
  if (folds < 2) throw UsageError("out-of-fold needs at least 2 folds");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.size(); ++i) {
    by_class[train[i].label].push_back(i);
  }
  std::vector<std::size_t> fold_of(train.size());
  for (auto& [label, idx] : by_class) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return train[a].source_id < train[b].source_id;
    });
    Rng rng(derive_seed(job.config.seed, 3, label));
    shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold_of[idx[k]] = k % folds;
  }

  ProbabilityMatrix out;
  out.sample_ids.resize(train.size());
  out.labels.resize(train.size());
  out.rows.resize(train.size());
  for (std::size_t f = 0; f < folds; ++f) {
    DatasetSplit split;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (fold_of[i] == f) {
        held.push_back(i);
      } else {
        split.train.push_back(train[i]);
      }
    }
    if (held.empty() || split.train.empty()) {
      throw DataError("out-of-fold: too few training images for the folds");
    }
    TrainJob fold_job = job;
    fold_job.config.seed = derive_seed(job.config.seed, 4, f);
    const TrainResult fit = train_model(fold_job, split, nullptr, rounds);
    std::vector<LabeledImage> held_images;
    for (std::size_t i : held) held_images.push_back(train[i]);
    const ProbabilityMatrix p =
        export_probabilities(fit.model, held_images, job.augment);
    for (std::size_t k = 0; k < held.size(); ++k) {
      out.sample_ids[held[k]] = p.sample_ids[k];
      out.labels[held[k]] = p.labels[k];
      out.rows[held[k]] = p.rows[k];
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(where + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(where + ": bad integer '" + s + "'");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_probability_csv(const std::filesystem::path& path,
                           const ProbabilityMatrix& m) {
  auto out = open_out(path);
  out << "sample_id,label";
  for (std::size_t k = 0; k < kNumClasses; ++k) out << ",p" << k;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.sample_ids[i].find(',') != std::string::npos) {
      throw DataError("sample id contains a comma: " + m.sample_ids[i]);
    }
    out << m.sample_ids[i] << ',' << m.labels[i];
    for (double p : m.rows[i]) out << ',' << format_double(p);
    out << '\n';
  }
}

ProbabilityMatrix read_probability_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open probability file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,label", 0) != 0) {
    throw FormatError(path.string() + ": missing sample_id,label header");
  }
  ProbabilityMatrix m;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto f = split_csv(line);
    if (f.size() != 2 + kNumClasses) {
      throw FormatError(where + ": expected " + std::to_string(2 + kNumClasses) +
                        " fields");
    }
    std::array<double, kNumClasses> row{};
    double sum = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      row[k] = parse_double(f[2 + k], where);
      if (!std::isfinite(row[k]) || row[k] < 0.0) {
        throw FormatError(where + ": probabilities must be finite and >= 0");
      }
      sum += row[k];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw FormatError(where + ": row does not sum to 1");
    }
    m.sample_ids.push_back(f[0]);
    m.labels.push_back(parse_index(f[1], where));
    m.rows.push_back(row);
  }
  return m;
}

void write_history_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> history) {
  auto out = open_out(path);
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_double(r.train_loss) << ','
        << format_double(r.train_accuracy) << ',' << format_double(r.val_loss)
        << ',' << format_double(r.val_accuracy) << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history file " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto f = split_csv(line);
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    out.push_back({parse_index(f[0], where), parse_double(f[1], where),
                   parse_double(f[2], where), parse_double(f[3], where),
                   parse_double(f[4], where)});
  }
  return out;
}

}  // namespace gdn
