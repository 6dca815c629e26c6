#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "stsc/service.hpp"
#include "stsc/synthetic.hpp"

using namespace stsc;

namespace {

ModelFile<float> small_model() {
  const auto w = init_weights<float>(ArchitectureConfig::test_preset(), 17);
  return decode_model<float>(encode_model(w, ModelMeta{32, 99}));
}

std::string png_body(std::uint64_t seed, std::size_t size) {
  Xorshift64Star rng(seed);
  const auto bytes = encode_png(synthetic_content<float>(size, rng));
  return std::string(bytes.begin(), bytes.end());
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceOptions opts;
    opts.max_body_bytes = 64 * 1024;
    service_ = std::make_unique<InferenceService<float>>(small_model(), opts);
    service_->mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }
  std::string reference(const std::string& body, double alpha) const {
    const auto* p = reinterpret_cast<const std::uint8_t*>(body.data());
    const auto out = stylize_image_bytes(service_->model(), std::span<const std::uint8_t>(p, body.size()), alpha);
    return std::string(out.png.begin(), out.png.end());
  }

  httplib::Server server_;
  std::unique_ptr<InferenceService<float>> service_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, Health) {
  auto res = client().Get("/api/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, R"({"status":"ok"})");
}

TEST_F(ServiceTest, ModelMetadata) {
  auto res = client().Get("/api/model");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto j = nlohmann::json::parse(res->body);
  EXPECT_EQ(j.at("alpha_max").get<double>(), 10.0);
  EXPECT_EQ(j.at("alpha_min").get<double>(), 0.0);
  EXPECT_EQ(j.at("widths").get<std::vector<std::size_t>>(), (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(j.at("residual_blocks").get<std::size_t>(), 5u);
  EXPECT_EQ(j.at("image_size").get<std::size_t>(), 32u);
  EXPECT_EQ(j.at("train_seed").get<std::uint64_t>(), 99u);
  EXPECT_EQ(j.at("checkpoint_hash").get<std::string>(), "crc32:" + crc_hex(service_->model().crc));
  EXPECT_NE(service_->model().crc, 0u);
}

TEST_F(ServiceTest, StylizeMatchesDirectInferenceAndIsDeterministic) {
  const std::string body = png_body(1, 48);
  for (double alpha : {0.0, 1.0, 5.0}) {
    const std::string path = "/api/stylize?alpha=" + format_alpha(alpha);
    auto a = client().Post(path, body, "image/png");
    auto b = client().Post(path, body, "image/png");
    ASSERT_TRUE(a && b);
    ASSERT_EQ(a->status, 200) << a->body;
    EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(a->get_header_value("X-Alpha"), format_alpha(alpha));
    EXPECT_EQ(a->get_header_value("X-Image-Size"), "32x32");
    EXPECT_FALSE(a->has_header("X-Alpha-Extrapolated"));
    EXPECT_EQ(a->body, b->body);
    EXPECT_EQ(a->body, reference(body, alpha));
    const auto img = decode_image<float>(std::span(reinterpret_cast<const std::uint8_t*>(a->body.data()), a->body.size()));
    EXPECT_EQ(img.shape(), (Shape{1, 3, 32, 32}));
  }
}

TEST_F(ServiceTest, InvalidAlpha) {
  const std::string body = png_body(1, 32);
  for (const char* q : {"/api/stylize?alpha=abc", "/api/stylize?alpha=nan", "/api/stylize?alpha=", "/api/stylize",
                        "/api/stylize?alpha=1.5x"}) {
    auto res = client().Post(q, body, "image/png");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400) << q;
    EXPECT_EQ(res->body, R"({"error":"invalid alpha"})") << q;
  }
}

TEST_F(ServiceTest, InvalidImage) {
  auto res = client().Post("/api/stylize?alpha=1", std::string("not an image"), "image/png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(res->body, R"({"error":"invalid image"})");
  auto empty = client().Post("/api/stylize?alpha=1", std::string(), "image/png");
  ASSERT_TRUE(empty);
  EXPECT_EQ(empty->status, 400);
}

TEST_F(ServiceTest, PayloadTooLarge) {
  auto res = client().Post("/api/stylize?alpha=1", std::string(64 * 1024 + 1, 'x'), "image/png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 413);
  EXPECT_EQ(res->body, R"({"error":"payload too large"})");
}

TEST_F(ServiceTest, ExtrapolatedAlphaIsServedAndFlagged) {
  const std::string body = png_body(2, 32);
  for (const char* a : {"12.5", "-1"}) {
    auto res = client().Post(std::string("/api/stylize?alpha=") + a, body, "image/png");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("X-Alpha-Extrapolated"), "true");
    EXPECT_EQ(res->get_header_value("X-Alpha"), a);
  }
}

TEST_F(ServiceTest, ConcurrentRequestsMatchSerial) {
  const std::string bodies[2] = {png_body(3, 40), png_body(4, 64)};
  const double alphas[4] = {0.0, 0.5, 3.0, 10.0};
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 16; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      auto c = client();
      auto res = c.Post("/api/stylize?alpha=" + format_alpha(alphas[i % 4]), bodies[i % 2], "image/png");
      return res && res->status == 200 ? res->body : std::string();
    }));
  }
  for (int i = 0; i < 16; ++i) {
    const std::string got = futures[i].get();
    ASSERT_FALSE(got.empty()) << i;
    EXPECT_EQ(got, reference(bodies[i % 2], alphas[i % 4])) << i;
  }
}
