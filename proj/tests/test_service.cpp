#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "gdn/cli.hpp"
#include "gdn/service.hpp"
#include "support.hpp"

using namespace gdn;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string png_bytes(const Rgb8Image& img) {
  const auto b = encode_png(img);
  return {b.begin(), b.end()};
}

httplib::Result upload(httplib::Client& c, const std::string& field, const std::string& body,
                       const std::string& type = "image/png") {
  httplib::MultipartFormDataItems items{{field, body, "upload.png", type}};
  return c.Post("/api/v1/predict", items);
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    test::write_models_dir(dir_ / "models");
    fs::create_directories(dir_ / "static");
    std::ofstream(dir_ / "static" / "index.html") << "<html>gdn</html>";
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.models_dir = dir_ / "models";
    cfg.suggestions = test::source_dir() / "config" / "suggestions.txt";
    cfg.max_upload_bytes = 64 * 1024;
    cfg.static_dir = dir_ / "static";
    service_ = std::make_unique<InferenceService>(cfg);
    port_ = service_->bind();
    service_->start();
  }
  void TearDown() override { service_->stop(); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  test::TempDir dir_;
  std::unique_ptr<InferenceService> service_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, HealthIs503UntilModelsLoad) {
  auto c = client();
  auto r = c.Get("/api/v1/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 503);
  EXPECT_EQ(json::parse(r->body)["status"], "loading");
  auto p = upload(c, "image", png_bytes(test::solid_image(20, 20, 1, 2, 3)));
  ASSERT_TRUE(p);
  EXPECT_EQ(p->status, 503);
  EXPECT_EQ(c.Get("/api/v1/models")->status, 503);

  service_->load_models();
  r = c.Get("/api/v1/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const json h = json::parse(r->body);
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["model_versions"].size(), 3u);
  EXPECT_GE(h["uptime"].get<double>(), 0.0);
}

TEST_F(ServiceTest, PredictReturnsReport) {
  service_->load_models();
  auto c = client();
  auto r = upload(c, "image", png_bytes(test::solid_image(40, 30, 200, 100, 50)));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const json j = json::parse(r->body);
  double sum = 0;
  for (const auto& e : j["class_probabilities"]) sum += e["probability"].get<double>();
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_TRUE(j.contains("suggestion"));
  EXPECT_TRUE(j["cancer_flag"].is_boolean());
}

TEST_F(ServiceTest, ConcurrentUploadsAgree) {
  service_->load_models();
  const std::string body = png_bytes(test::solid_image(36, 36, 90, 140, 210));
  std::vector<std::string> replies(32);
  std::vector<int> status(32, 0);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 32; ++i) {
    threads.emplace_back([&, i] {
      auto c = client();
      auto r = upload(c, "image", body);
      if (!r) return;
      status[i] = r->status;
      json j = json::parse(r->body);
      j.erase("timestamp");
      replies[i] = j.dump();
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(status[i], 200) << i;
    EXPECT_EQ(replies[i], replies[0]) << i;
  }
}

TEST_F(ServiceTest, RejectsBadUploads) {
  service_->load_models();
  auto c = client();

  auto text = upload(c, "image", "just some text", "text/plain");
  ASSERT_TRUE(text);
  EXPECT_EQ(text->status, 400);
  EXPECT_FALSE(json::parse(text->body)["message"].get<std::string>().empty());

  auto raw = c.Post("/api/v1/predict", png_bytes(test::solid_image(8, 8, 0, 0, 0)),
                    "image/png");
  ASSERT_TRUE(raw);
  EXPECT_EQ(raw->status, 415);

  auto wrong_field = upload(c, "file", png_bytes(test::solid_image(8, 8, 0, 0, 0)));
  ASSERT_TRUE(wrong_field);
  EXPECT_EQ(wrong_field->status, 400);

  auto big = upload(c, "image", std::string(100 * 1024, 'x'));
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 400);
  EXPECT_NE(json::parse(big->body)["message"].get<std::string>().find("limit"),
            std::string::npos);

  auto huge = upload(c, "image", std::string(2 * 1024 * 1024, 'x'));
  ASSERT_TRUE(huge);
  EXPECT_EQ(huge->status, 400);
}

TEST_F(ServiceTest, ModelsEndpointDescribesStack) {
  service_->load_models();
  auto c = client();
  auto r = c.Get("/api/v1/models");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_NE(r->body.find("googlenet_like"), std::string::npos);
  EXPECT_NE(r->body.find("densenet_like"), std::string::npos);
}

TEST_F(ServiceTest, ServesStaticFilesAtRoot) {
  auto c = client();
  auto r = c.Get("/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>gdn</html>");
  auto root = c.Get("/");
  ASSERT_TRUE(root);
  EXPECT_EQ(root->status, 200);
}

TEST(ServiceDirect, PredictUploadMatchesCliReport) {
  test::TempDir dir;
  test::write_models_dir(dir / "models");
  ServiceConfig cfg;
  cfg.models_dir = dir / "models";
  cfg.suggestions = test::source_dir() / "config" / "suggestions.txt";
  InferenceService service(cfg);
  service.load_models();
  const Rgb8Image img = test::solid_image(30, 30, 10, 200, 10);
  const HttpReply reply = service.predict_upload(true, png_bytes(img));
  ASSERT_EQ(reply.status, 200);
  json body = json::parse(reply.body);

  write_png(dir / "img.png", img);
  std::ostringstream out, err;
  ASSERT_EQ(run_cli({"predict", "--models-dir", (dir / "models").string(), "--image",
                     (dir / "img.png").string(), "--suggestions", cfg.suggestions.string()},
                    out, err),
            0)
      << err.str();
  json cli = json::parse(out.str());
  body.erase("timestamp");
  cli.erase("timestamp");
  EXPECT_EQ(body, cli);
}
