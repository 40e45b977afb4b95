#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gdn/predictor.hpp"

namespace gdn {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path models_dir;
  std::filesystem::path suggestions;
  std::size_t max_upload_bytes = 8u << 20;
  std::optional<std::filesystem::path> static_dir;
  std::size_t worker_threads = 8;
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

class InferenceService {
 public:
  explicit InferenceService(ServiceConfig cfg);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  // Binds the listening socket and returns the bound port. Serving starts
  // with start(); health answers 503 until load_models() succeeds.
  int bind();
  void start();
  void wait();
  void stop();

  // Reads the suggestions table and the three artifacts from models_dir.
  void load_models();
  // Installs an already loaded predictor.
  void install(std::shared_ptr<const GdnPredictor> predictor, Suggestions suggestions);
  bool ready() const;

  HttpReply predict_upload(bool multipart, const std::optional<std::string>& image) const;
  HttpReply health() const;
  HttpReply models() const;

 private:
  struct State {
    std::shared_ptr<const GdnPredictor> predictor;
    std::shared_ptr<const Suggestions> suggestions;
  };
  State snapshot() const;

  struct Impl;
  ServiceConfig cfg_;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex mu_;
  State state_;
  std::chrono::steady_clock::time_point started_;
};

}  // namespace gdn
