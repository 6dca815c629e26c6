#pragma once

// HTTP backend for interactive strength tuning.
//
//   POST /api/stylize?alpha=REAL   body: PNG/PPM bytes   -> 200 image/png
//        headers: X-Alpha (parsed alpha), X-Image-Size (e.g. "64x64"),
//                 X-Alpha-Extrapolated: true (only when alpha is outside [0, 10])
//        400 {"error": "invalid alpha"} | {"error": "invalid image"}
//        413 {"error": "payload too large"}
//   GET  /api/health  -> {"status":"ok"}
//   GET  /api/model   -> architecture, training grid bounds, checkpoint hash
//
// The loaded model is immutable; each request builds its own tape and buffers.

#include <cstdio>
#include <memory>
#include <string>

// Eigen must be seen before httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "stsc/inference.hpp"
#include "stsc/trainer.hpp"

#include <httplib.h>
#include <json.hpp>

namespace stsc {

struct ServiceOptions {
  std::size_t max_body_bytes = 16u << 20;
};

inline std::string crc_hex(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

template <typename T>
nlohmann::json model_metadata(const ModelFile<T>& m) {
  return {{"widths", m.weights.arch.widths},
          {"residual_blocks", m.weights.arch.residual_blocks},
          {"parameter_count", parameter_count(m.weights.arch)},
          {"image_size", m.meta.image_size},
          {"train_seed", m.meta.seed},
          {"alpha_min", 0.0},
          {"alpha_max", kAlphaMax},
          {"alpha_step", 0.1},
          {"checkpoint_hash", "crc32:" + crc_hex(m.crc)}};
}

template <typename T>
class InferenceService {
 public:
  InferenceService(ModelFile<T> model, ServiceOptions opts)
      : model_(std::make_shared<const ModelFile<T>>(std::move(model))), opts_(opts) {}

  const ModelFile<T>& model() const { return *model_; }

  void mount(httplib::Server& server) const {
    server.set_payload_max_length(opts_.max_body_bytes);
    auto model = model_;
    const ServiceOptions opts = opts_;

    // httplib rejects oversized bodies itself, before any route runs.
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status != 413 || !res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      res.set_content(R"({"error":"payload too large"})", "application/json");
      return httplib::Server::HandlerResponse::Handled;
    });

    server.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });

    server.Get("/api/model", [model](const httplib::Request&, httplib::Response& res) {
      res.set_content(model_metadata(*model).dump(), "application/json");
    });

    server.Post("/api/stylize", [model, opts](const httplib::Request& req, httplib::Response& res) {
      auto fail = [&res](int status, const char* message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
      };
      if (req.body.size() > opts.max_body_bytes) return fail(413, "payload too large");
      const auto alpha = req.has_param("alpha") ? parse_alpha(req.get_param_value("alpha")) : std::nullopt;
      if (!alpha) return fail(400, "invalid alpha");
      StylizedImage out;
      try {
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(req.body.data());
        out = stylize_image_bytes(*model, std::span<const std::uint8_t>(bytes, req.body.size()), *alpha);
      } catch (const ImageError&) {
        return fail(400, "invalid image");
      } catch (const ShapeError&) {
        return fail(400, "invalid image");
      } catch (const std::exception&) {
        return fail(500, "internal error");
      }
      res.set_header("X-Alpha", format_alpha(*alpha));
      res.set_header("X-Image-Size", std::to_string(out.size) + "x" + std::to_string(out.size));
      if (alpha_extrapolated(*alpha)) res.set_header("X-Alpha-Extrapolated", "true");
      res.set_content(std::string(out.png.begin(), out.png.end()), "image/png");
    });
  }

 private:
  std::shared_ptr<const ModelFile<T>> model_;
  ServiceOptions opts_;
};

}  // namespace stsc
