#pragma once

// Randomized-strength training: every minibatch draws one alpha uniformly from
// {0.0, 0.1, ..., 10.0} and minimizes
//   lambda_c * content + alpha * lambda_s * style + lambda_tv * tv
// with Adam. A fixed-strength baseline is the same loop with alpha pinned.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stsc/adam.hpp"
#include "stsc/checkpoint.hpp"
#include "stsc/encoder.hpp"
#include "stsc/error.hpp"
#include "stsc/image.hpp"
#include "stsc/loss.hpp"
#include "stsc/rng.hpp"
#include "stsc/tape.hpp"
#include "stsc/transformer.hpp"

namespace stsc {

inline constexpr std::size_t kAlphaGridSize = 101;
inline constexpr double kAlphaMax = 10.0;

/// The training grid k / 10 for k = 0..100.
inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (std::size_t k = 0; k < kAlphaGridSize; ++k) g.push_back(static_cast<double>(k) / 10.0);
  return g;
}

/// One uniform draw from the training grid.
template <typename Rng>
double sample_strength(Rng& rng) {
  return static_cast<double>(rng.below(kAlphaGridSize)) / 10.0;
}

/// Strength for global step `step` of a run seeded with `seed`.
inline double step_strength(std::uint64_t seed, std::uint64_t step) {
  auto rng = Xorshift64Star::keyed(seed, step);
  return sample_strength(rng);
}

struct TrainConfig {
  std::size_t image_size = 64;
  std::size_t batch_size = 4;
  std::size_t epochs = 1;
  double learning_rate = 1e-3;
  std::vector<double> alpha_grid = default_alpha_grid();
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::string content_dir;
  std::string style_image_path;
  std::string checkpoint_out;
  // Desk-scale extensions.
  ArchitectureConfig architecture;
  std::string log_out;
  std::uint64_t encoder_seed = 0;
  std::string encoder_path;

  void validate() const {
    if (image_size == 0 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (alpha_grid != default_alpha_grid()) throw ConfigError("alpha_grid must be exactly {0.0, 0.1, ..., 10.0}");
    loss_weights.validate();
    architecture.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"image_size", c.image_size},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"alpha_grid", c.alpha_grid},
      {"loss_weights",
       {{"lambda_content", c.loss_weights.lambda_content},
        {"lambda_style", c.loss_weights.lambda_style},
        {"lambda_tv", c.loss_weights.lambda_tv}}},
      {"seed", c.seed},
      {"content_dir", c.content_dir},
      {"style_image_path", c.style_image_path},
      {"checkpoint_out", c.checkpoint_out},
      {"architecture", {{"widths", c.architecture.widths}, {"residual_blocks", c.architecture.residual_blocks}}},
      {"log_out", c.log_out},
      {"encoder_seed", c.encoder_seed},
      {"encoder_path", c.encoder_path},
  };
}

/// Parses a config object. Keys must match TrainConfig field names; unknown
/// keys and missing required keys raise ConfigError naming the key.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "image_size", "batch_size",   "epochs",  "learning_rate", "alpha_grid",   "loss_weights",
      "seed",       "content_dir",  "style_image_path", "checkpoint_out", "architecture", "log_out",
      "encoder_seed", "encoder_path"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key \"" + key + "\"");
  for (const char* key : {"content_dir", "style_image_path", "checkpoint_out"})
    if (!j.contains(key)) throw ConfigError(std::string("missing required config key \"") + key + "\"");

  TrainConfig c;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key \"") + key + "\" has the wrong type");
    }
  };
  read("image_size", c.image_size);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("learning_rate", c.learning_rate);
  read("alpha_grid", c.alpha_grid);
  read("seed", c.seed);
  read("content_dir", c.content_dir);
  read("style_image_path", c.style_image_path);
  read("checkpoint_out", c.checkpoint_out);
  read("log_out", c.log_out);
  read("encoder_seed", c.encoder_seed);
  read("encoder_path", c.encoder_path);
  if (j.contains("loss_weights")) {
    const auto& lw = j.at("loss_weights");
    if (!lw.is_object()) throw ConfigError("config key \"loss_weights\" must be an object");
    for (const auto& [key, _] : lw.items())
      if (key != "lambda_content" && key != "lambda_style" && key != "lambda_tv")
        throw ConfigError("unknown config key \"loss_weights." + key + "\"");
    try {
      c.loss_weights.lambda_content = lw.value("lambda_content", c.loss_weights.lambda_content);
      c.loss_weights.lambda_style = lw.value("lambda_style", c.loss_weights.lambda_style);
      c.loss_weights.lambda_tv = lw.value("lambda_tv", c.loss_weights.lambda_tv);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key \"loss_weights\" has the wrong type");
    }
  }
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    if (!a.is_object()) throw ConfigError("config key \"architecture\" must be an object");
    for (const auto& [key, _] : a.items())
      if (key != "widths" && key != "residual_blocks") throw ConfigError("unknown config key \"architecture." + key + "\"");
    try {
      if (a.contains("widths")) a.at("widths").get_to(c.architecture.widths);
      if (a.contains("residual_blocks")) a.at("residual_blocks").get_to(c.architecture.residual_blocks);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key \"architecture\" has the wrong type");
    }
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return train_config_from_json(j);
}

struct TrainLogEntry {
  std::size_t step = 0;
  LossBreakdown loss;
};

/// {"step", "alpha", "content", "style", "tv", "total"} on one line.
inline std::string log_line(const TrainLogEntry& e) {
  nlohmann::json j{{"step", e.step},       {"alpha", e.loss.alpha_used}, {"content", e.loss.content},
                   {"style", e.loss.style}, {"tv", e.loss.tv},            {"total", e.loss.total}};
  return j.dump();
}

template <typename T>
struct TrainResult {
  TransformerWeights<T> weights;
  std::vector<TrainLogEntry> log;
};

/// Called after each step with the updated weights.
template <typename T>
using StepCallback = std::function<void(std::size_t step, const TransformerWeights<T>&, const TrainLogEntry&)>;

/// Minibatch index lists for one epoch, shuffled deterministically by (seed, epoch).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                           std::size_t epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  auto rng = Xorshift64Star::keyed(seed ^ 0xD1B54A32D192ED03ULL, epoch);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  return batches;
}

/// One optimization step on `batch` at strength `alpha`; returns its loss.
template <typename T>
LossBreakdown train_step(TransformerWeights<T>& weights, AdamState<T>& adam, const Tensor4<T>& batch,
                         const StyleTarget<T>& target, double alpha, const LossWeights& lw,
                         const EncoderWeights<T>& enc, double lr) {
  Tape<T> tape;
  const BoundParams bound = bind(tape, weights, true);
  const Var x = tape.constant(batch);
  const Var y = transformer_forward(tape, x, bound, weights.arch, alpha);
  const LossTerms terms = total_loss(tape, x, y, target, alpha, lw, enc);
  const LossBreakdown b = breakdown(tape, terms, alpha, lw);
  if (!std::isfinite(b.total)) return b;
  tape.backward(terms.total);
  std::map<std::string, Tensor4<T>> grads;
  for (const auto& [name, var] : bound) grads.emplace(name, tape.grad(var));
  adam_step(weights.params, grads, adam, lr);
  return b;
}

/// Trains on already-prepared content images (each (1, 3, s, s)).
/// `fixed_alpha` pins the strength for every minibatch (baseline models).
template <typename T>
TrainResult<T> train_in_memory(const TrainConfig& cfg, std::span<const Tensor4<T>> contents, const Tensor4<T>& style,
                               const EncoderWeights<T>& enc, std::optional<double> fixed_alpha = std::nullopt,
                               const StepCallback<T>& on_step = {}) {
  cfg.validate();
  if (contents.empty()) throw TrainingError("empty dataset: no content images", 0);
  const StyleTarget<T> target = make_style_target(style, enc);
  TrainResult<T> result{init_weights<T>(cfg.architecture, cfg.seed), {}};
  AdamState<T> adam;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(contents.size(), cfg.batch_size, cfg.seed, epoch)) {
      std::vector<Tensor4<T>> items;
      for (std::size_t i : idx) items.push_back(contents[i]);
      const Tensor4<T> batch = stack_batch<T>(items);
      const double alpha = fixed_alpha ? *fixed_alpha : step_strength(cfg.seed, step);
      const LossBreakdown b =
          train_step(result.weights, adam, batch, target, alpha, cfg.loss_weights, enc, cfg.learning_rate);
      if (!std::isfinite(b.total)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step), step);
      }
      result.log.push_back({step, b});
      if (on_step) on_step(step, result.weights, result.log.back());
      ++step;
    }
  }
  return result;
}

/// Content images in `dir` (*.png, *.ppm), sorted by file name, resized and
/// center-cropped to `size`.
template <typename T>
std::vector<Tensor4<T>> load_content_dir(const std::filesystem::path& dir, std::size_t size) {
  if (!std::filesystem::is_directory(dir)) throw ImageError("content_dir is not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor4<T>> out;
  for (const auto& f : files) out.push_back(resize_and_crop(load_image<T>(f), size));
  return out;
}

/// Metadata stored next to the weights in a model checkpoint.
struct ModelMeta {
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
};

template <typename T>
struct ModelFile {
  TransformerWeights<T> weights;
  ModelMeta meta;
  std::uint32_t crc = 0;  // trailing CRC of the file, used as its hash
};

template <typename T>
TensorMap model_to_map(const TransformerWeights<T>& w, const ModelMeta& meta) {
  TensorMap map = transformer_to_map(w);
  map["meta.image_size"] = StoredTensor{{1}, {static_cast<float>(meta.image_size)}};
  // 64-bit seed as four 16-bit limbs, each exact in float32.
  StoredTensor seed{{4}, {}};
  for (int i = 0; i < 4; ++i) seed.data.push_back(static_cast<float>((meta.seed >> (16 * i)) & 0xFFFF));
  map["meta.seed"] = seed;
  return map;
}

template <typename T>
std::vector<std::uint8_t> encode_model(const TransformerWeights<T>& w, const ModelMeta& meta) {
  return encode_checkpoint(model_to_map(w, meta));
}

template <typename T>
void save_checkpoint(const TransformerWeights<T>& w, const std::filesystem::path& path, const ModelMeta& meta = {}) {
  write_file_bytes(path, encode_model(w, meta));
}

template <typename T>
ModelFile<T> decode_model(std::span<const std::uint8_t> bytes) {
  const TensorMap map = decode_checkpoint(bytes);
  ModelFile<T> mf{transformer_from_map<T>(map), {}, checkpoint_crc(bytes)};
  if (auto it = map.find("meta.image_size"); it != map.end() && it->second.data.size() == 1)
    mf.meta.image_size = static_cast<std::size_t>(it->second.data[0]);
  if (auto it = map.find("meta.seed"); it != map.end() && it->second.data.size() == 4) {
    for (int i = 0; i < 4; ++i) mf.meta.seed |= static_cast<std::uint64_t>(it->second.data[i]) << (16 * i);
  }
  return mf;
}

template <typename T>
ModelFile<T> load_model(const std::filesystem::path& path) {
  return decode_model<T>(read_file_bytes(path));
}

template <typename T>
TransformerWeights<T> load_checkpoint(const std::filesystem::path& path) {
  return load_model<T>(path).weights;
}

/// Encoder selected by a config: imported when encoder_path is set, otherwise generated.
template <typename T>
EncoderWeights<T> encoder_for(const TrainConfig& cfg) {
  if (!cfg.encoder_path.empty()) return import_encoder<T>(cfg.encoder_path);
  return generate_encoder<T>(cfg.encoder_seed);
}

/// File-driven training: loads data, trains, writes the checkpoint and log.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const EncoderWeights<T>& enc, std::optional<double> fixed_alpha = std::nullopt) {
  cfg.validate();
  const std::vector<Tensor4<T>> contents = load_content_dir<T>(cfg.content_dir, cfg.image_size);
  if (contents.empty()) throw TrainingError("empty dataset: no PNG/PPM images in " + cfg.content_dir, 0);
  const Tensor4<T> style = resize_and_crop(load_image<T>(cfg.style_image_path), cfg.image_size);
  TrainResult<T> result = train_in_memory<T>(cfg, contents, style, enc, fixed_alpha);
  if (!cfg.checkpoint_out.empty()) save_checkpoint(result.weights, cfg.checkpoint_out, ModelMeta{cfg.image_size, cfg.seed});
  if (!cfg.log_out.empty()) {
    std::ofstream log(cfg.log_out, std::ios::trunc);
    if (!log) throw ConfigError("cannot write log " + cfg.log_out);
    for (const auto& e : result.log) log << log_line(e) << '\n';
  }
  return result;
}

}  // namespace stsc
