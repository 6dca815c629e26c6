// stsc: train, stylize, sweep, eval, gradcheck, serve.
//
// Exit codes: 0 success, 1 gradcheck failure or unexpected error,
// 2 bad flags/config/files/images, 3 training aborted.

#include "stsc/gradient_suite.hpp"
#include "stsc/service.hpp"
#include "stsc/stsc.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : stsc::Error {
  using stsc::Error::Error;
};

void print_config(const json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::uint8_t> read_input(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("input not found: " + path);
  return stsc::read_file_bytes(path);
}

stsc::ModelFile<stsc::InferenceScalar> read_model(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("model not found: " + path);
  return stsc::load_model<stsc::InferenceScalar>(path);
}

double require_alpha(const std::string& text) {
  const auto a = stsc::parse_alpha(text);
  if (!a) throw UsageError("invalid alpha \"" + text + "\"");
  return *a;
}

std::string sweep_file_name(double alpha) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "out_%.1f.png", alpha);
  return buf;
}

// Relative paths in a config file are taken relative to the file itself.
void anchor_paths(stsc::TrainConfig& cfg, const fs::path& config_path) {
  const fs::path base = config_path.parent_path();
  for (std::string* p : {&cfg.content_dir, &cfg.style_image_path, &cfg.checkpoint_out, &cfg.log_out, &cfg.encoder_path})
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
}

struct Options {
  std::uint64_t seed = 0;
  std::string config, model, input, output, alpha, alphas, outdir, contents_dir, encoder, out_json, out_csv;
  std::vector<std::string> styles, baselines;
  std::uint64_t encoder_seed = 0;
  bool self_baseline = false;
  std::size_t instances = 3, samples = 20;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_body_bytes = stsc::ServiceOptions{}.max_body_bytes;
};

int cmd_train(const Options& o, bool seed_given) {
  stsc::TrainConfig cfg = stsc::load_train_config(o.config);
  anchor_paths(cfg, o.config);
  if (seed_given) cfg.seed = o.seed;
  print_config({{"command", "train"}, {"config", stsc::to_json(cfg)}});
  const auto enc = stsc::encoder_for<float>(cfg);
  const auto result = stsc::train<float>(cfg, enc);
  if (!result.log.empty()) {
    std::cout << "final " << stsc::log_line(result.log.back()) << "\n";
  }
  std::cout << "wrote " << cfg.checkpoint_out << "\n";
  return 0;
}

int cmd_stylize(const Options& o) {
  const double alpha = require_alpha(o.alpha);
  print_config({{"command", "stylize"}, {"model", o.model}, {"input", o.input}, {"alpha", alpha}, {"output", o.output}});
  const auto model = read_model(o.model);
  const auto bytes = read_input(o.input);
  const auto out = stsc::stylize_image_bytes(model, bytes, alpha);
  if (stsc::alpha_extrapolated(alpha)) std::cerr << "warning: alpha " << alpha << " is outside the trained range [0, 10]\n";
  stsc::write_file_bytes(o.output, out.png);
  return 0;
}

int cmd_sweep(const Options& o) {
  std::vector<double> alphas;
  std::set<std::string> seen;
  std::stringstream ss(o.alphas);
  for (std::string item; std::getline(ss, item, ',');) {
    const double a = require_alpha(item);
    if (!seen.insert(sweep_file_name(a)).second) {
      std::cerr << "warning: duplicate alpha " << item << " skipped\n";
      continue;
    }
    alphas.push_back(a);
  }
  if (alphas.empty()) throw UsageError("no alphas given");
  print_config({{"command", "sweep"}, {"model", o.model}, {"input", o.input}, {"alphas", alphas}, {"outdir", o.outdir}});
  const auto model = read_model(o.model);
  const auto bytes = read_input(o.input);
  fs::create_directories(o.outdir);
  json entries = json::array();
  for (double a : alphas) {
    const auto out = stsc::stylize_image_bytes(model, bytes, a);
    const std::string name = sweep_file_name(a);
    stsc::write_file_bytes(fs::path(o.outdir) / name, out.png);
    entries.push_back({{"alpha", a}, {"file", name}, {"extrapolated", stsc::alpha_extrapolated(a)}});
  }
  const json index = {{"model", o.model}, {"input", o.input}, {"image_size", model.meta.image_size}, {"entries", entries}};
  std::ofstream(fs::path(o.outdir) / "index.json") << index.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  std::vector<double> strengths;
  std::stringstream ss(o.alphas);
  for (std::string item; std::getline(ss, item, ',');) strengths.push_back(require_alpha(item));
  std::sort(strengths.begin(), strengths.end());
  strengths.erase(std::unique(strengths.begin(), strengths.end()), strengths.end());
  if (strengths.empty()) throw UsageError("no alphas given");
  if (o.styles.empty()) throw UsageError("at least one --style is required");
  if (o.baselines.empty() == !o.self_baseline) throw UsageError("give either --baseline ALPHA=PATH or --self-baseline");

  std::map<double, std::string> baseline_paths;
  for (const auto& spec : o.baselines) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--baseline expects ALPHA=PATH, got \"" + spec + "\"");
    baseline_paths[require_alpha(spec.substr(0, eq))] = spec.substr(eq + 1);
  }
  print_config({{"command", "eval"},
                {"model", o.model},
                {"contents", o.contents_dir},
                {"styles", o.styles},
                {"alphas", strengths},
                {"baselines", baseline_paths.empty() ? json("self") : json(baseline_paths)},
                {"encoder", o.encoder.empty() ? json{{"seed", o.encoder_seed}} : json{{"path", o.encoder}}},
                {"out_json", o.out_json},
                {"out_csv", o.out_csv}});

  if (!fs::is_regular_file(o.model)) throw UsageError("model not found: " + o.model);
  const auto model = stsc::load_model<double>(o.model);
  const std::size_t size = model.meta.image_size;
  const auto enc = o.encoder.empty() ? stsc::generate_encoder<double>(o.encoder_seed) : stsc::import_encoder<double>(o.encoder);
  if (!fs::is_directory(o.contents_dir)) throw UsageError("content directory not found: " + o.contents_dir);
  const auto contents = stsc::load_content_dir<double>(o.contents_dir, size);
  if (contents.empty()) throw UsageError("no content images in " + o.contents_dir);

  std::vector<stsc::NamedStyle<double>> styles;
  for (const auto& path : o.styles) {
    if (!fs::is_regular_file(path)) throw UsageError("style image not found: " + path);
    styles.push_back({fs::path(path).stem().string(),
                      stsc::make_style_target(stsc::resize_and_crop(stsc::load_image<double>(path), size), enc)});
  }
  std::map<double, stsc::TransformerWeights<double>> loaded;
  std::map<double, const stsc::TransformerWeights<double>*> baselines;
  for (double a : strengths) {
    if (o.self_baseline) {
      baselines[a] = &model.weights;
      continue;
    }
    const auto it = baseline_paths.find(a);
    if (it == baseline_paths.end()) throw UsageError("no --baseline for alpha " + stsc::format_alpha(a));
    if (!fs::is_regular_file(it->second)) throw UsageError("baseline not found: " + it->second);
    baselines[a] = &loaded.emplace(a, stsc::load_checkpoint<double>(it->second)).first->second;
  }

  const auto report = stsc::loss_ratio<double>(model.weights, baselines, contents, styles, strengths, stsc::LossWeights{}, enc);
  for (const auto& row : report.rows) {
    std::printf("alpha %-6s total %.6f +- %.6f  content %.6f +- %.6f  style %.6f +- %.6f\n",
                stsc::format_alpha(row.alpha).c_str(), row.total.mean, row.total.std, row.content.mean, row.content.std,
                row.style.mean, row.style.std);
  }
  if (!o.out_json.empty()) std::ofstream(o.out_json) << stsc::report_to_json(report).dump(2) << "\n";
  if (!o.out_csv.empty()) std::ofstream(o.out_csv) << stsc::report_to_csv(report);
  return 0;
}

int cmd_gradcheck(const Options& o) {
  print_config({{"command", "gradcheck"}, {"seed", o.seed}, {"instances", o.instances}, {"samples", o.samples}});
  auto checks = stsc::primitive_gradient_checks(o.seed, o.instances);
  for (auto& c : stsc::end_to_end_gradient_checks(o.seed, o.samples)) checks.push_back(std::move(c));

  struct Summary {
    double err = 0.0;
    bool pass = true;
    std::size_t checked = 0, skipped = 0;
  };
  std::map<std::string, Summary> by_name;
  double worst = 0.0;
  bool ok = true;
  for (const auto& c : checks) {
    Summary& s = by_name[c.name];
    s.err = std::max(s.err, c.report.max_rel_error);
    s.pass = s.pass && c.report.passed;
    s.checked += c.report.entries.size();
    s.skipped += c.report.skipped_kinks;
    worst = std::max(worst, c.report.max_rel_error);
    ok = ok && c.report.passed;
  }
  for (const auto& [name, s] : by_name)
    std::printf("%-18s %s  max rel error %.3e  (%zu checked, %zu skipped at kinks)\n", name.c_str(),
                s.pass ? "ok  " : "FAIL", s.err, s.checked, s.skipped);
  std::printf("max relative error: %.6e\n", worst);
  return ok ? 0 : 1;
}

int cmd_serve(const Options& o) {
  auto model = read_model(o.model);
  print_config({{"command", "serve"},
                {"model", o.model},
                {"host", o.host},
                {"port", o.port},
                {"max_body_bytes", o.max_body_bytes},
                {"metadata", stsc::model_metadata(model)}});
  stsc::InferenceService<stsc::InferenceScalar> service(std::move(model), {o.max_body_bytes});
  httplib::Server server;
  service.mount(server);
  int port = o.port;
  if (port == 0) {
    port = server.bind_to_any_port(o.host);
  } else if (!server.bind_to_port(o.host, port)) {
    port = -1;
  }
  if (port < 0) {
    std::cerr << "error: cannot bind " << o.host << ":" << o.port << "\n";
    return 1;
  }
  std::cout << "listening on " << o.host << ":" << port << std::endl;
  return server.listen_after_bind() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Strength-controlled style transfer"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", o.config, "config file")->required();
  auto* train_seed = train->add_option("--seed", o.seed, "override the config seed");

  auto* stylize = app.add_subcommand("stylize", "stylize one image");
  stylize->add_option("--model", o.model)->required();
  stylize->add_option("--input", o.input)->required();
  stylize->add_option("--alpha", o.alpha, "strength (real)")->required();
  stylize->add_option("--output", o.output)->required();
  stylize->add_option("--seed", o.seed);

  auto* sweep = app.add_subcommand("sweep", "render one image per strength");
  sweep->add_option("--model", o.model)->required();
  sweep->add_option("--input", o.input)->required();
  sweep->add_option("--alphas", o.alphas, "comma-separated strengths")->required();
  sweep->add_option("--outdir", o.outdir)->required();
  sweep->add_option("--seed", o.seed);

  auto* eval = app.add_subcommand("eval", "loss ratios against per-strength baselines");
  eval->add_option("--model", o.model)->required();
  eval->add_option("--contents", o.contents_dir, "directory of content images")->required();
  eval->add_option("--style", o.styles, "style image (repeatable)")->required();
  eval->add_option("--alphas", o.alphas, "comma-separated strengths")->required();
  eval->add_option("--baseline", o.baselines, "ALPHA=PATH (repeatable)");
  eval->add_flag("--self-baseline", o.self_baseline, "use the model as its own baseline");
  eval->add_option("--encoder-seed", o.encoder_seed, "seed of the generated encoder");
  eval->add_option("--encoder", o.encoder, "imported encoder file");
  eval->add_option("--out-json", o.out_json);
  eval->add_option("--out-csv", o.out_csv);
  eval->add_option("--seed", o.seed);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", o.seed);
  gradcheck->add_option("--instances", o.instances, "random problems per primitive")->check(CLI::PositiveNumber);
  gradcheck->add_option("--samples", o.samples, "sampled parameters end to end")->check(CLI::PositiveNumber);

  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  serve->add_option("--model", o.model)->required();
  serve->add_option("--port", o.port, "0 picks an ephemeral port");
  serve->add_option("--host", o.host);
  serve->add_option("--max-body-bytes", o.max_body_bytes)->check(CLI::PositiveNumber);
  serve->add_option("--seed", o.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(o, train_seed->count() > 0);
    if (*stylize) return cmd_stylize(o);
    if (*sweep) return cmd_sweep(o);
    if (*eval) return cmd_eval(o);
    if (*gradcheck) return cmd_gradcheck(o);
    if (*serve) return cmd_serve(o);
  } catch (const stsc::TrainingError& e) {
    std::cerr << "error: training aborted at step " << e.step() << ": " << e.what() << "\n";
    return 3;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stsc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stsc::ImageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stsc::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
