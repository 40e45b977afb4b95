#include "gdn/cli.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>

#include "gdn/checkpoint.hpp"
#include "gdn/classes.hpp"
#include "gdn/config.hpp"
#include "gdn/error.hpp"
#include "gdn/meta.hpp"
#include "gdn/ops.hpp"
#include "gdn/predictor.hpp"
#include "gdn/service.hpp"
#include "gdn/trainer.hpp"

#ifndef GDN_DEFAULT_SUGGESTIONS
#define GDN_DEFAULT_SUGGESTIONS "config/suggestions.txt"
#endif

namespace gdn {
namespace fs = std::filesystem;
namespace {

constexpr const char* kSplitFile = "split.tsv";
constexpr const char* kPreprocessReport = "preprocess_report.txt";
constexpr const char* kPreviewFile = "preview.png";
constexpr const char* kRunManifest = "run_manifest.json";
constexpr const char* kGdnReport = "gdn_report.txt";
constexpr const char* kEvaluationReport = "evaluation_report.txt";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool out_required) {
  cmd->add_option("--config", o.config, "TOML-like config file");
  cmd->add_option("--seed", o.seed, "Run seed (overrides run.seed)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (out_required) out->required();
  cmd->add_flag("--force", o.force, "Overwrite existing artifacts");
  cmd->add_option("--set", o.sets, "Override a config key: section.key=value");
}

Config resolve_config(const CommonOptions& o) {
  Config c;
  if (!o.config.empty()) c = Config::load(o.config);
  for (const auto& s : o.sets) c.set(s);
  if (o.seed) c.set("run.seed", std::to_string(*o.seed));
  return c;
}

std::uint64_t run_seed(const Config& c) { return c.get_uint("run.seed", 42); }

const char* section_of(Family f) {
  return f == Family::GoogLeNetLike ? "googlenet" : "densenet";
}

const char* file_stem(Family f) {
  return f == Family::GoogLeNetLike ? "googlenet" : "densenet";
}

TrainJob make_job(Family family, const Config& c) {
  const std::string sec = section_of(family);
  auto key = [&](const char* k) { return sec + "." + k; };
  const std::string preset = c.get_string(key("preset"), "mini");
  TrainJob job;
  if (preset == "mini") {
    job.spec = family == Family::GoogLeNetLike ? mini_googlenet_spec() : mini_densenet_spec();
  } else if (preset == "full") {
    job.spec = family == Family::GoogLeNetLike ? full_googlenet_spec() : full_densenet_spec();
  } else {
    throw UsageError(key("preset") + " must be mini or full, got '" + preset + "'");
  }
  job.spec.input_side = c.get_uint(key("input_side"), job.spec.input_side);
  job.augment = AugmentConfig::for_crop(job.spec.input_side);
  job.augment.resize_to = c.get_uint(key("resize_to"), job.augment.resize_to);
  job.augment.hflip_prob = c.get_double(key("hflip_prob"), job.augment.hflip_prob);
  job.augment.validate();

  TrainConfig& t = job.config;
  t = default_train_config(family);
  if (preset == "full") t.batch_size = family == Family::GoogLeNetLike ? 24 : 8;
  t.learning_rate = c.get_double(key("learning_rate"), t.learning_rate);
  t.batch_size = c.get_uint(key("batch_size"), t.batch_size);
  t.epochs_per_round = c.get_uint(key("epochs_per_round"), t.epochs_per_round);
  t.max_rounds = c.get_uint(key("max_rounds"), t.max_rounds);
  t.adam_beta1 = c.get_double(key("adam_beta1"), t.adam_beta1);
  t.adam_beta2 = c.get_double(key("adam_beta2"), t.adam_beta2);
  t.adam_epsilon = c.get_double(key("adam_epsilon"), t.adam_epsilon);
  t.target_accuracy = c.get_double(key("target_accuracy"), t.target_accuracy);
  t.overfit_gap = c.get_double(key("overfit_gap"), t.overfit_gap);
  t.seed = derive_seed(run_seed(c), family == Family::GoogLeNetLike ? 1 : 2);
  t.validate();
  return job;
}

AblationConfig ablation_config(const Config& c) {
  AblationConfig a;
  a.logreg.C = c.get_double("meta.C", a.logreg.C);
  a.logreg.tol = c.get_double("meta.tol", a.logreg.tol);
  a.logreg.max_iters = c.get_uint("meta.max_iters", a.logreg.max_iters);
  a.perceptron_epochs = c.get_uint("meta.perceptron_epochs", a.perceptron_epochs);
  a.svm_penalty = c.get_double("meta.svm_penalty", a.svm_penalty);
  a.svm_epochs = c.get_uint("meta.svm_epochs", a.svm_epochs);
  a.knn_k = c.get_uint("meta.knn_k", a.knn_k);
  a.tree_max_depth = c.get_uint("meta.tree_max_depth", a.tree_max_depth);
  a.tree_min_leaf = c.get_uint("meta.tree_min_leaf", a.tree_min_leaf);
  return a;
}

nlohmann::ordered_json train_config_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["epochs_per_round"] = t.epochs_per_round;
  j["max_rounds"] = t.max_rounds;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_epsilon"] = t.adam_epsilon;
  j["seed"] = t.seed;
  j["target_accuracy"] = t.target_accuracy;
  j["overfit_gap"] = t.overfit_gap;
  return j;
}

// Append-only output directory. Every file a command will write is declared
// up front; existing files are refused unless --force.
class OutputDir {
 public:
  OutputDir(const fs::path& dir, const std::vector<std::string>& files, bool force)
      : dir_(dir) {
    for (const auto& f : files) {
      if (fs::exists(dir / f) && !force) {
        throw UsageError((dir / f).string() +
                         " already exists; use a fresh directory or --force");
      }
    }
    fs::create_directories(dir);
  }

  fs::path file(const std::string& name) {
    written_.push_back(dir_ / name);
    return dir_ / name;
  }
  void rollback() {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string dataset_digest(std::span<const LabeledImage> train,
                           std::span<const LabeledImage> val) {
  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& img : train) items.emplace_back(img.source_id, img.content_hash);
  for (const auto& img : val) items.emplace_back(img.source_id, img.content_hash);
  std::sort(items.begin(), items.end());
  std::string text;
  for (const auto& [id, hash] : items) text += id + "\t" + hash + "\n";
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void warn_unknown_classes(const std::vector<std::string>& names, std::ostream& err) {
  for (const auto& n : names) {
    if (!find_lesion_class(n)) {
      err << "gdn: warning: class directory '" << n
          << "' is not one of the six lesion classes; reports will use the "
             "lesion name at the same index\n";
    }
  }
}

// ---------------------------------------------------------------- preprocess

Rgb8Image preview_grid(std::span<const LabeledImage> train, const AugmentConfig& aug,
                       std::uint64_t seed) {
  const std::size_t count = std::min<std::size_t>(16, train.size());
  const std::size_t cols = 4, rows = (count + cols - 1) / cols, gap = 2;
  const std::size_t s = aug.crop_to;
  Rgb8Image grid{cols * s + (cols + 1) * gap, rows * s + (rows + 1) * gap, {}};
  grid.pixels.assign(grid.width * grid.height * 3, 255);
  const auto order = epoch_order(train.size(), derive_seed(seed, 5));
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, 6, n));
    Tensor x = augment(train[order[n]].pixels, aug, Mode::Train, rng);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < s * s; ++i) {
        x[c * s * s + i] = x[c * s * s + i] * aug.std[c] + aug.mean[c];
      }
    }
    const Rgb8Image tile = from_tensor(x);
    const std::size_t top = gap + (n / cols) * (s + gap);
    const std::size_t left = gap + (n % cols) * (s + gap);
    for (std::size_t y = 0; y < s; ++y) {
      std::copy_n(tile.pixels.data() + y * s * 3, s * 3,
                  grid.pixels.data() + ((top + y) * grid.width + left) * 3);
    }
  }
  return grid;
}

int cmd_preprocess(const std::string& data, const CommonOptions& o, std::ostream& out,
                   std::ostream& err) {
  const Config c = resolve_config(o);
  const std::uint64_t seed = run_seed(c);
  const double ratio = c.get_double("data.split_ratio", 0.8);
  Dataset ds = load_dataset(data);
  for (const auto& w : ds.warnings) err << "gdn: warning: " << w << '\n';
  warn_unknown_classes(ds.class_names, err);
  const DatasetSplit split = split_train_val(ds.images, ratio, seed);
  const SplitManifest manifest =
      make_split_manifest(split, fs::absolute(data), ds.class_names);

  OutputDir dir(o.out, {kSplitFile, kPreprocessReport, kPreviewFile}, o.force);
  write_split_manifest(dir.file(kSplitFile), manifest);

  std::vector<std::size_t> hist(ds.class_names.size(), 0);
  for (const auto& img : ds.images) ++hist[img.label];
  std::ostringstream report;
  report << "dataset_root: " << manifest.dataset_root.string() << '\n'
         << "files_seen: " << ds.files_seen << '\n'
         << "undecodable: " << ds.warnings.size() << '\n'
         << "removed: " << ds.duplicates_removed << '\n'
         << "images: " << ds.images.size() << '\n'
         << "seed: " << seed << '\n'
         << "split_ratio: " << format_double(ratio) << '\n'
         << "train: " << split.train.size() << '\n'
         << "val: " << split.val.size() << '\n'
         << "class histogram:\n";
  for (std::size_t k = 0; k < hist.size(); ++k) {
    report << "  " << std::left << std::setw(24) << ds.class_names[k] << hist[k] << '\n';
  }
  write_text(dir.file(kPreprocessReport), report.str());
  write_png(dir.file(kPreviewFile),
            preview_grid(split.train, make_job(Family::GoogLeNetLike, c).augment, seed));
  out << report.str();
  return kExitOk;
}

// --------------------------------------------------------------------- train

struct TrainOptions {
  std::string split;
  std::string replay;
  std::string meta_train_on;
  std::optional<std::size_t> folds;
  bool sequential = false;
};

void print_progress(ProgressChannel& channel, std::ostream& err) {
  while (auto p = channel.receive()) {
    const auto& r = p->record;
    if (!p->decision && r.epoch % 10 != 0) continue;
    err << p->model << " epoch " << r.epoch << " train_loss "
        << std::setprecision(4) << r.train_loss << " train_acc " << r.train_accuracy
        << " val_loss " << r.val_loss << " val_acc " << r.val_accuracy;
    if (p->decision) err << " round_decision " << decision_name(*p->decision);
    err << '\n';
  }
}

std::vector<ProbabilityMatrix> oof_for_jobs(std::span<const TrainJob> jobs,
                                            const std::vector<TrainResult>& results,
                                            std::span<const LabeledImage> train,
                                            std::size_t folds, bool sequential) {
  std::vector<ProbabilityMatrix> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&](std::size_t i) {
    try {
      out[i] = out_of_fold_probabilities(jobs[i], train, folds, results[i].rounds_run);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (sequential) {
    for (std::size_t i = 0; i < jobs.size(); ++i) work(i);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < jobs.size(); ++i) threads.emplace_back(work, i);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

int cmd_train(TrainOptions t, const CommonOptions& o, std::ostream& out,
              std::ostream& err) {
  const std::string started = utc_timestamp();
  Config c;
  if (!t.replay.empty()) {
    const auto run = read_json(t.replay);
    try {
      c = Config::from_json(run.at("config"));
      if (t.split.empty()) t.split = run.at("split_manifest").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(t.replay + ": " + e.what());
    }
  }
  c.merge(resolve_config(o));
  if (t.split.empty()) throw UsageError("train needs --split or --replay");
  if (!t.meta_train_on.empty()) c.set("meta.train_on", t.meta_train_on);
  if (t.folds) c.set("meta.folds", std::to_string(*t.folds));
  const std::string train_on = c.get_string("meta.train_on", "oof");
  if (train_on != "oof" && train_on != "trainset") {
    throw UsageError("--meta-train-on must be oof or trainset");
  }
  const std::size_t folds = c.get_uint("meta.folds", 2);

  const SplitManifest manifest = read_split_manifest(t.split);
  const Dataset ds = load_dataset(manifest.dataset_root);
  for (const auto& w : ds.warnings) err << "gdn: warning: " << w << '\n';
  const DatasetSplit split = apply_split_manifest(ds.images, manifest);
  if (split.train.empty() || split.val.empty()) {
    throw DataError("split manifest must have both train and val entries");
  }
  const std::vector<TrainJob> jobs{make_job(Family::GoogLeNetLike, c),
                                   make_job(Family::DenseNetLike, c)};

  std::vector<std::string> files{kRunManifest};
  for (const auto& job : jobs) {
    const std::string stem = file_stem(job.spec.family);
    for (const char* suffix : {".gdnc", "_history.csv", "_train_probs.csv", "_val_probs.csv"}) {
      files.push_back(stem + suffix);
    }
  }
  OutputDir dir(o.out, files, o.force);

  try {
    // The guard sender keeps the printer alive until training returns.
    ProgressChannel channel;
    channel.add_sender();
    std::thread printer([&] { print_progress(channel, err); });
    std::vector<TrainResult> results;
    try {
      results = t.sequential ? train_base_models_sequential(jobs, split, &channel)
                             : train_base_models_parallel(jobs, split, &channel);
    } catch (...) {
      channel.close_sender();
      printer.join();
      throw;
    }
    channel.close_sender();
    printer.join();

    std::vector<ProbabilityMatrix> train_probs;
    if (train_on == "oof") {
      err << "fitting out-of-fold base models (" << folds << " folds)\n";
      train_probs = oof_for_jobs(jobs, results, split.train, folds, t.sequential);
    } else {
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        train_probs.push_back(
            export_probabilities(results[i].model, split.train, jobs[i].augment));
      }
    }

    nlohmann::ordered_json models;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const std::string stem = file_stem(jobs[i].spec.family);
      const auto& r = results[i];
      CheckpointMetadata meta{jobs[i].augment, r.history.size(),
                              r.history.back().val_accuracy};
      save_checkpoint(r.model, meta, dir.file(stem + ".gdnc"));
      write_history_csv(dir.file(stem + "_history.csv"), r.history);
      write_probability_csv(dir.file(stem + "_train_probs.csv"), train_probs[i]);
      write_probability_csv(
          dir.file(stem + "_val_probs.csv"),
          export_probabilities(r.model, split.val, jobs[i].augment));
      nlohmann::ordered_json m;
      m["spec"] = spec_to_json(jobs[i].spec);
      m["train"] = train_config_json(jobs[i].config);
      m["augment"] = augment_to_json(jobs[i].augment);
      m["rounds_run"] = r.rounds_run;
      m["epochs"] = r.history.size();
      m["final_decision"] = decision_name(r.final_decision);
      m["final_val_accuracy"] = r.history.back().val_accuracy;
      models[family_name(jobs[i].spec.family)] = m;
      out << family_name(jobs[i].spec.family) << ": " << r.rounds_run << " round(s), "
          << decision_name(r.final_decision) << ", val_accuracy "
          << format_double(r.history.back().val_accuracy) << '\n';
    }

    nlohmann::ordered_json run;
    run["format"] = "gdn-run 1";
    run["command"] = "train";
    run["config"] = c.to_json();
    run["seeds"] = {{"run", run_seed(c)},
                    {"googlenet_like", jobs[0].config.seed},
                    {"densenet_like", jobs[1].config.seed}};
    run["dataset"] = {{"root", manifest.dataset_root.string()},
                      {"digest", dataset_digest(split.train, split.val)},
                      {"train", split.train.size()},
                      {"val", split.val.size()}};
    run["split_manifest"] = fs::absolute(t.split).string();
    run["meta_train_on"] = train_on;
    run["folds"] = folds;
    run["scheduling"] = t.sequential ? "sequential" : "parallel";
    run["models"] = models;
    run["artifacts"] = files;
    run["started"] = started;
    run["finished"] = utc_timestamp();
    write_text(dir.file(kRunManifest), run.dump(2) + "\n");
  } catch (...) {
    dir.rollback();
    throw;
  }
  return kExitOk;
}

// ------------------------------------------------------------- stack / ablate

struct RunProbabilities {
  ProbabilityMatrix google_train, google_val, dense_train, dense_val;
};

RunProbabilities read_run_probabilities(const fs::path& run) {
  return {read_probability_csv(run / "googlenet_train_probs.csv"),
          read_probability_csv(run / "googlenet_val_probs.csv"),
          read_probability_csv(run / "densenet_train_probs.csv"),
          read_probability_csv(run / "densenet_val_probs.csv")};
}

double matrix_accuracy(const ProbabilityMatrix& m) {
  std::vector<std::size_t> predicted;
  for (const auto& row : m.rows) predicted.push_back(argmax_lowest(row));
  return accuracy_from_predictions(predicted, m.labels);
}

std::string accuracy_report(double google, double dense, double gdn,
                            const std::string& meta_kind_name) {
  std::ostringstream r;
  r << std::left << std::setw(16) << "model" << "val_accuracy\n";
  r << std::fixed << std::setprecision(6);
  r << std::setw(16) << "googlenet_like" << google << '\n';
  r << std::setw(16) << "densenet_like" << dense << '\n';
  r << std::setw(16) << "GDN" << gdn << '\n';
  r << "meta_model: " << meta_kind_name << '\n';
  return r.str();
}

int cmd_stack(const std::string& run, std::string classifier, const CommonOptions& o,
              std::ostream& out) {
  const Config c = resolve_config(o);
  if (classifier.empty()) classifier = c.get_string("meta.classifier", "logreg");
  const auto p = read_run_probabilities(run);
  const StackedFeatures train = stack_features(p.google_train, p.dense_train);
  const StackedFeatures val = stack_features(p.google_val, p.dense_val);
  const MetaModel model = fit_meta(classifier, train, ablation_config(c));
  const std::string report =
      accuracy_report(matrix_accuracy(p.google_val), matrix_accuracy(p.dense_val),
                      meta_accuracy(model, val), meta_kind(model));
  OutputDir dir(o.out.empty() ? fs::path(run) : fs::path(o.out),
                {kMetaModelFile, kGdnReport}, o.force);
  save_meta_model(dir.file(kMetaModelFile), model);
  write_text(dir.file(kGdnReport), report);
  out << report;
  return kExitOk;
}

int cmd_ablate(const std::string& run, const CommonOptions& o, std::ostream& out) {
  const Config c = resolve_config(o);
  const auto p = read_run_probabilities(run);
  const auto rows = run_ablation(stack_features(p.google_train, p.dense_train),
                                 stack_features(p.google_val, p.dense_val),
                                 ablation_config(c));
  const std::string table = format_ablation_table(rows);
  OutputDir dir(o.out.empty() ? fs::path(run) : fs::path(o.out),
                {"ablation.txt", "ablation.csv"}, o.force);
  write_text(dir.file("ablation.txt"), table);
  write_ablation_csv(dir.file("ablation.csv"), rows);
  out << table;
  return kExitOk;
}

// ------------------------------------------------------------------ evaluate

int cmd_evaluate(const std::string& run, std::string split_path, const CommonOptions& o,
                 std::ostream& out) {
  if (split_path.empty()) {
    const auto manifest = read_json(fs::path(run) / kRunManifest);
    if (!manifest.contains("split_manifest")) {
      throw FormatError(kRunManifest + std::string(": missing split_manifest"));
    }
    split_path = manifest["split_manifest"].get<std::string>();
  }
  const SplitManifest manifest = read_split_manifest(split_path);
  const Dataset ds = load_dataset(manifest.dataset_root);
  const DatasetSplit split = apply_split_manifest(ds.images, manifest);
  if (split.val.empty()) throw DataError("split manifest has no val entries");
  const GdnPredictor predictor = GdnPredictor::load(run);

  std::vector<std::size_t> g, d, s, labels;
  for (const auto& img : split.val) {
    const GdnOutput r = predictor.predict_pixels(img.pixels);
    g.push_back(argmax_lowest(r.googlenet));
    d.push_back(argmax_lowest(r.densenet));
    s.push_back(r.predicted);
    labels.push_back(img.label);
  }
  const std::string report = accuracy_report(
      accuracy_from_predictions(g, labels), accuracy_from_predictions(d, labels),
      accuracy_from_predictions(s, labels), meta_kind(predictor.meta()));
  OutputDir dir(o.out.empty() ? fs::path(run) : fs::path(o.out), {kEvaluationReport},
                o.force);
  write_text(dir.file(kEvaluationReport), report);
  out << report;
  return kExitOk;
}

// ----------------------------------------------------------- predict / serve

int cmd_predict(const std::string& models_dir, const std::string& image,
                const std::string& suggestions, const std::string& timestamp,
                std::ostream& out) {
  const Suggestions table = Suggestions::load(suggestions);
  const GdnPredictor predictor = GdnPredictor::load(models_dir);
  const Rgb8Image decoded = read_image(image);
  const GdnOutput result = predictor.predict(decoded);
  out << build_report(result, table, predictor.versions(),
                      timestamp.empty() ? utc_timestamp() : timestamp)
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_serve(ServiceConfig cfg, std::ostream& out, std::ostream& err) {
  // Block termination signals in every thread; the main thread collects
  // them with sigwait and shuts the server down cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  InferenceService service(cfg);
  const int port = service.bind();
  service.start();
  out << "listening on http://" << cfg.host << ":" << port << std::endl;
  try {
    service.load_models();
  } catch (...) {
    service.stop();
    throw;
  }
  err << "models loaded from " << cfg.models_dir.string() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  service.stop();
  return kExitOk;
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stacked two-network skin lesion classifier", "gdn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gdn 1.0");

  CommonOptions common;
  std::string data, run, split, image, classifier, timestamp;
  std::string suggestions = GDN_DEFAULT_SUGGESTIONS;
  TrainOptions train;
  ServiceConfig serve;
  serve.suggestions = GDN_DEFAULT_SUGGESTIONS;
  std::string models_dir, static_dir;

  auto* pre = app.add_subcommand("preprocess", "Deduplicate, split and preview a dataset");
  pre->add_option("--data", data, "Dataset root with one directory per class")->required();
  add_common(pre, common, true);

  auto* tr = app.add_subcommand("train", "Train both base networks and export probabilities");
  tr->add_option("--split", train.split, "Split manifest from preprocess");
  tr->add_option("--replay", train.replay, "Rerun from a previous run_manifest.json");
  tr->add_option("--meta-train-on", train.meta_train_on, "oof (default) or trainset");
  tr->add_option("--folds", train.folds, "Folds for out-of-fold probabilities");
  tr->add_flag("--sequential", train.sequential, "Train the two networks one after another");
  add_common(tr, common, true);

  auto* st = app.add_subcommand("stack", "Fit the meta-model on a training run");
  st->add_option("--run", run, "Directory written by train")->required();
  st->add_option("--classifier", classifier, "logreg, perceptron, svm, knn or tree");
  add_common(st, common, false);

  auto* ab = app.add_subcommand("ablate", "Compare the five meta-classifiers");
  ab->add_option("--run", run, "Directory written by train")->required();
  add_common(ab, common, false);

  auto* ev = app.add_subcommand("evaluate", "Run the full stack on the val images");
  ev->add_option("--run", run, "Directory holding checkpoints and meta model")->required();
  ev->add_option("--split", split, "Split manifest (default: the one used for training)");
  add_common(ev, common, false);

  auto* pr = app.add_subcommand("predict", "Classify one image");
  pr->add_option("--models-dir,--run", models_dir, "Directory holding the artifacts")
      ->required();
  pr->add_option("--image", image, "PNG or JPEG file")->required();
  pr->add_option("--suggestions", suggestions, "Suggestions table");
  pr->add_option("--timestamp", timestamp, "Fixed timestamp for the report");
  add_common(pr, common, false);

  auto* sv = app.add_subcommand("serve", "HTTP inference service");
  sv->add_option("--models-dir", models_dir, "Directory holding the artifacts")->required();
  sv->add_option("--port", serve.port, "TCP port (0 picks a free one)");
  sv->add_option("--host", serve.host, "Bind address");
  sv->add_option("--suggestions", serve.suggestions, "Suggestions table");
  sv->add_option("--max-upload-bytes", serve.max_upload_bytes, "Upload size limit");
  sv->add_option("--static-dir", static_dir, "Directory served at /");
  add_common(sv, common, false);

  std::vector<std::string> argv_store{"gdn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << "gdn 1.0\n";
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }
    if (pre->parsed()) return cmd_preprocess(data, common, out, err);
    if (tr->parsed()) return cmd_train(train, common, out, err);
    if (st->parsed()) return cmd_stack(run, classifier, common, out);
    if (ab->parsed()) return cmd_ablate(run, common, out);
    if (ev->parsed()) return cmd_evaluate(run, split, common, out);
    if (pr->parsed()) return cmd_predict(models_dir, image, suggestions, timestamp, out);
    if (sv->parsed()) {
      serve.models_dir = models_dir;
      if (!static_dir.empty()) serve.static_dir = static_dir;
      return cmd_serve(serve, out, err);
    }
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "gdn: error: usage: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "gdn: error: divergence: " << one_line(e.what()) << '\n';
    return kExitDivergence;
  } catch (const DataError& e) {
    err << "gdn: error: data: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    err << "gdn: error: data: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "gdn: error: data: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "gdn: error: internal: " << one_line(e.what()) << '\n';
    return kExitInternal;
  }
}

}  // namespace gdn
