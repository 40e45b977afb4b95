#include "gdn/service.hpp"

#include <thread>

#include <httplib.h>

#include "gdn/error.hpp"

namespace gdn {
namespace {

std::string message_body(const std::string& error, const std::string& message) {
  return nlohmann::ordered_json{{"error", error}, {"message", message}}.dump();
}

void send(httplib::Response& res, const HttpReply& reply) {
  res.status = reply.status;
  res.set_content(reply.body, "application/json");
}

}  // namespace

struct InferenceService::Impl {
  httplib::Server server;
  std::thread listener;
};

InferenceService::InferenceService(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      impl_(std::make_unique<Impl>()),
      started_(std::chrono::steady_clock::now()) {
  auto& svr = impl_->server;
  const std::size_t workers = cfg_.worker_threads;
  svr.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  // Multipart framing adds overhead on top of the image itself; anything
  // past this is rejected by the server before a handler runs.
  svr.set_payload_max_length(cfg_.max_upload_bytes + (1u << 20));

  svr.Post("/api/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> image;
    if (req.is_multipart_form_data() && req.has_file("image")) {
      image = req.get_file_value("image").content;
    }
    send(res, predict_upload(req.is_multipart_form_data(), image));
  });
  svr.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    send(res, health());
  });
  svr.Get("/api/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    send(res, models());
  });
  svr.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      send(res, {400, message_body("bad_request",
                                   "upload exceeds the " +
                                       std::to_string(cfg_.max_upload_bytes) +
                                       "-byte limit")});
    } else if (res.body.empty()) {
      send(res, {res.status, message_body("error", "request failed")});
    }
  });
  if (cfg_.static_dir && std::filesystem::is_directory(*cfg_.static_dir)) {
    svr.set_mount_point("/", cfg_.static_dir->string());
  }
}

InferenceService::~InferenceService() { stop(); }

int InferenceService::bind() {
  int port = cfg_.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(cfg_.host);
  } else if (!impl_->server.bind_to_port(cfg_.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
  return port;
}

void InferenceService::start() {
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void InferenceService::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void InferenceService::stop() {
  impl_->server.stop();
  wait();
}

void InferenceService::load_models() {
  Suggestions suggestions = Suggestions::load(cfg_.suggestions);
  auto predictor = std::make_shared<const GdnPredictor>(GdnPredictor::load(cfg_.models_dir));
  install(std::move(predictor), std::move(suggestions));
}

void InferenceService::install(std::shared_ptr<const GdnPredictor> predictor,
                               Suggestions suggestions) {
  std::lock_guard lock(mu_);
  state_.predictor = std::move(predictor);
  state_.suggestions = std::make_shared<const Suggestions>(std::move(suggestions));
}

InferenceService::State InferenceService::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

bool InferenceService::ready() const { return snapshot().predictor != nullptr; }

HttpReply InferenceService::predict_upload(bool multipart,
                                           const std::optional<std::string>& image) const {
  const State state = snapshot();
  if (!state.predictor) {
    return {503, message_body("unavailable", "models are not loaded yet")};
  }
  if (!multipart) {
    return {415, message_body("unsupported_media_type",
                              "send multipart/form-data with an 'image' field")};
  }
  if (!image) return {400, message_body("bad_request", "missing 'image' field")};
  if (image->size() > cfg_.max_upload_bytes) {
    return {400, message_body("bad_request",
                              "image exceeds the " + std::to_string(cfg_.max_upload_bytes) +
                                  "-byte limit")};
  }
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(image->data());
  Rgb8Image decoded;
  try {
    decoded = decode_image({bytes, image->size()});
  } catch (const DataError&) {
    return {400, message_body("bad_request",
                              "the upload is not a readable PNG or JPEG image")};
  }
  const GdnOutput out = state.predictor->predict(decoded);
  return {200, build_report(out, *state.suggestions, state.predictor->versions(),
                            utc_timestamp())
                   .dump()};
}

HttpReply InferenceService::health() const {
  const State state = snapshot();
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  nlohmann::ordered_json j;
  j["status"] = state.predictor ? "ok" : "loading";
  j["model_versions"] = state.predictor ? model_versions_json(state.predictor->versions())
                                        : nlohmann::ordered_json(nullptr);
  j["uptime"] = uptime;
  return {state.predictor ? 200 : 503, j.dump()};
}

HttpReply InferenceService::models() const {
  const State state = snapshot();
  if (!state.predictor) {
    return {503, message_body("unavailable", "models are not loaded yet")};
  }
  return {200, state.predictor->describe().dump()};
}

}  // namespace gdn
