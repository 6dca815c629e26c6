// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances and runtime limits are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <set>

#include "oracles.hpp"
#include "process_util.hpp"
#include "stsc/stsc.hpp"
#include "stsc/service.hpp"

using namespace stsc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int failures = 0;

void criterion(int id, const char* title, double limit_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    o.ok = false;
    o.detail += fmt(" (over the %.0f s limit)", limit_s);
  }
  if (!o.ok) ++failures;
  std::printf("%s %2d %-28s %7.2fs  %s\n", o.ok ? "PASS" : "FAIL", id, title, secs, o.detail.c_str());
  std::fflush(stdout);
}

/// Scratch directory removed at exit.
struct Scratch {
  fs::path path = fs::temp_directory_path() / ("stsc_acceptance_" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(path); }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

// ---- 1 ----
Outcome gate_suite() {
  Xorshift64Star rng(1);
  double worst = 0.0;
  bool in_range = true;
  for (int i = 0; i < 1'000'000; ++i) {
    const double a = 40.0 * rng.uniform() - 20.0;
    const double b = 8.0 * rng.uniform() - 4.0;
    const double g = gamma(a, b);
    const double want = 2.0 - 2.0 / (1.0 + std::fabs(a) * std::fabs(b));
    worst = std::max(worst, std::fabs(g - want));
    in_range = in_range && g >= 0.0 && g < 2.0;
  }
  for (double big : {1e6, 1e12, 1e300}) in_range = in_range && gamma(big, 1.0) < 2.0;
  bool monotone = true;
  for (double beta : {-3.0, -0.1, 0.01, 1.0, 7.0}) {
    double prev = -1.0;
    for (int k = 0; k <= 2000; ++k) {
      const double g = gamma(-0.01 * k, beta);
      monotone = monotone && g >= prev;
      prev = g;
    }
  }
  return {worst <= 1e-12 && in_range && monotone,
          fmt("max |gamma - oracle| = %.2e", worst) + (in_range ? "" : ", out of [0, 2)") +
              (monotone ? "" : ", not monotone")};
}

// ---- 2 ----
Outcome identity_at_zero() {
  const ArchitectureConfig arch;
  const auto base = init_weights<double>(arch, 5);
  const auto x = oracle::random(Shape{1, 3, 64, 64}, 6, 0.0, 1.0);
  const auto ref = stylize(base, x, 0.0);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto other = base;
    Xorshift64Star rng(1000 + s);
    for (auto& [name, p] : other.params)
      if (is_residual_branch_param(name))
        for (auto& v : p.data()) v = 4.0 * rng.uniform() - 2.0;
    worst = std::max(worst, max_abs_diff(stylize(other, x, 0.0), ref));
  }
  return {worst <= 1e-12, fmt("max abs difference %.2e over 10 randomizations", worst)};
}

// ---- 3 ----
Outcome gradient_suite() {
  double prim = 0.0, e2e = 0.0;
  bool ok = true;
  std::set<std::string> names;
  for (const auto& c : primitive_gradient_checks(0, 50)) {
    names.insert(c.name);
    prim = std::max(prim, c.report.max_rel_error);
    ok = ok && !c.report.entries.empty();
  }
  const auto e = end_to_end_gradient_checks(0, 20);
  std::size_t sampled = 0, betas = e[1].report.entries.size();
  for (const auto& c : e) {
    e2e = std::max(e2e, c.report.max_rel_error);
    sampled += c.report.entries.size();
  }
  ok = ok && prim <= 1e-4 && e2e <= 1e-3 && sampled >= 20 && betas >= 2 && names.size() == 15;
  return {ok, fmt("primitives %.2e", prim) + fmt(", end to end %.2e", e2e) + " (" + std::to_string(sampled) +
                  " sampled, " + std::to_string(betas) + " betas, " + std::to_string(names.size()) + " primitives)"};
}

// ---- 4 ----
Outcome oracle_equivalence() {
  double conv = 0.0, gr = 0.0, sl = 0.0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    Xorshift64Star rng(500 + i);
    const std::size_t c_in = 1 + rng.below(4), c_out = 1 + rng.below(4), k = rng.below(2) ? 3 : 1;
    const std::size_t stride = 1 + rng.below(2), pad = k == 3 ? rng.below(2) : 0;
    const std::size_t h = 4 + rng.below(6), w = 4 + rng.below(6);
    const auto x = oracle::random(Shape{1 + rng.below(2), c_in, h, w}, 3 * i);
    const auto wt = oracle::random(Shape{c_out, c_in, k, k}, 3 * i + 1);
    const auto b = oracle::random(Shape{1, c_out, 1, 1}, 3 * i + 2);
    {
      Tape<double> t;
      const auto& got = t.value(conv2d(t, t.constant(x), t.constant(wt), t.constant(b), stride, pad));
      conv = std::max(conv, max_abs_diff(got, oracle::conv2d(x, wt, b, stride, pad)));
    }
    {
      const auto f = oracle::random(Shape{1, 1 + rng.below(5), 2 + rng.below(5), 2 + rng.below(5)}, 9000 + i);
      Tape<double> t;
      const auto& g = t.value(gram(t, t.constant(f)));
      const auto want = oracle::gram(f);
      for (std::size_t a = 0; a < f.shape().c; ++a)
        for (std::size_t bb = 0; bb < f.shape().c; ++bb)
          gr = std::max(gr, std::fabs(g.at(0, 0, a, bb) - want[0][a][bb]));
    }
    {
      Tape<double> t, ts;
      FeatureSet y, s;
      StyleTarget<double> target;
      double expected = 0.0;
      const std::size_t batch = 1 + rng.below(2);
      for (std::size_t k2 = 0; k2 < 4; ++k2) {
        const std::size_t c = 1 + rng.below(4), hh = 2 + rng.below(4);
        const auto fy = oracle::random(Shape{batch, c, hh, hh}, 20000 + 8 * i + k2);
        const auto fs = oracle::random(Shape{1, c, hh + 1, hh + 1}, 30000 + 8 * i + k2);
        y.stages[k2] = t.constant(fy);
        s.stages[k2] = ts.constant(fs);
        target.grams[k2] = ts.value(gram(ts, s.stages[k2]));
        expected += oracle::style_layer(fy, oracle::gram(fs)[0]);
      }
      sl = std::max(sl, std::fabs(t.value(style_loss(t, y, target)).item() - expected));
    }
  }
  return {conv <= 1e-10 && gr <= 1e-10 && sl <= 1e-10,
          fmt("conv2d %.2e", conv) + fmt(", gram %.2e", gr) + fmt(", style_loss %.2e", sl) + " over 50 instances each"};
}

// ---- 5, 6 ----
struct Overfit {
  Tensor4<float> content;
  TransformerWeights<float> trained;
  double before = 0.0, after = 0.0;
  std::vector<double> style_after;
};

const std::vector<double> kProbes = {0.1, 1.0, 5.0, 10.0};

Overfit run_overfit() {
  Overfit r;
  Xorshift64Star rng(0);
  r.content = synthetic_content<float>(64, rng);
  const auto style = synthetic_style<float>(64);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 200;
  cfg.seed = 0;
  const auto enc = generate_encoder<float>(0);
  const auto target = make_style_target(style, enc);
  auto loss_at = [&](const TransformerWeights<float>& w, double a) {
    return evaluate_loss(r.content, stylize(w, r.content, a), target, a, cfg.loss_weights, enc);
  };
  r.before = loss_at(init_weights<float>(cfg.architecture, cfg.seed), 5.0).total;
  const std::vector<Tensor4<float>> contents = {r.content};
  r.trained = train_in_memory<float>(cfg, contents, style, enc).weights;
  r.after = loss_at(r.trained, 5.0).total;
  for (double a : kProbes) r.style_after.push_back(loss_at(r.trained, a).style);
  return r;
}

// ---- 7 ----
Outcome eval_harness() {
  const auto enc = generate_encoder<double>(0);
  Xorshift64Star rng(12);
  std::vector<Tensor4<double>> contents;
  for (int i = 0; i < 3; ++i) contents.push_back(synthetic_content<double>(32, rng));
  const std::vector<NamedStyle<double>> styles = {
      {"waves", make_style_target(synthetic_style<double>(32), enc)},
      {"shapes", make_style_target(synthetic_content<double>(32, rng), enc)}};
  const auto model = init_weights<double>(ArchitectureConfig::test_preset(), 1);
  const auto other = init_weights<double>(ArchitectureConfig::test_preset(), 2);
  const std::vector<double> strengths = {0.1, 1.0, 5.0};
  std::map<double, const TransformerWeights<double>*> self, base;
  for (double a : strengths) {
    self[a] = &model;
    base[a] = &other;
  }
  bool ok = true;
  const auto r1 = loss_ratio<double>(model, self, contents, styles, strengths, LossWeights{}, enc);
  for (const auto& row : r1.rows)
    for (const RatioStat* s : {&row.total, &row.content, &row.style}) ok = ok && s->mean == 1.0 && s->std == 0.0;
  const bool self_ok = ok;

  const auto r2 = loss_ratio<double>(model, base, contents, styles, strengths, LossWeights{}, enc);
  double drift = 0.0;
  const auto rebuilt = ratio_rows_from_raw(raw_from_csv(report_to_csv(r2)), r2.styles, r2.strengths);
  for (std::size_t k = 0; k < rebuilt.size(); ++k) {
    const RatioStat* a[] = {&rebuilt[k].total, &rebuilt[k].content, &rebuilt[k].style};
    const RatioStat* b[] = {&r2.rows[k].total, &r2.rows[k].content, &r2.rows[k].style};
    for (int j = 0; j < 3; ++j)
      drift = std::max({drift, std::fabs(a[j]->mean - b[j]->mean), std::fabs(a[j]->std - b[j]->std)});
  }
  const auto back = report_from_json(nlohmann::json::parse(report_to_json(r2).dump()));
  bool json_ok = back.styles == r2.styles && back.strengths == r2.strengths && back.raw.size() == r2.raw.size();
  for (std::size_t i = 0; json_ok && i < r2.rows.size(); ++i)
    json_ok = back.rows[i].total.mean == r2.rows[i].total.mean && back.rows[i].style.std == r2.rows[i].style.std;
  ok = ok && drift <= 1e-12 && json_ok;
  return {ok, std::string(self_ok ? "self ratios exactly 1, std 0" : "self ratios not 1") +
                  fmt("; recompute drift %.2e", drift) + (json_ok ? "; JSON/CSV round trip" : "; JSON mismatch")};
}

// ---- 8 ----
Outcome checkpoint_format(const fs::path& dir) {
  const auto w = init_weights<float>(ArchitectureConfig{}, 3);
  save_checkpoint(w, dir / "a.stsc", ModelMeta{64, 77});
  const auto loaded = load_model<float>(dir / "a.stsc");
  save_checkpoint(loaded.weights, dir / "b.stsc", loaded.meta);
  const auto bytes = read_file_bytes(dir / "a.stsc");
  const bool same = bytes == read_file_bytes(dir / "b.stsc") && loaded.weights == w;
  auto kind = [](std::vector<std::uint8_t> b) -> std::optional<CheckpointError::Kind> {
    try {
      decode_model<float>(b);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  auto crc = bytes, magic = bytes, version = bytes;
  crc[bytes.size() / 2] ^= 0x10;
  magic[0] = 'X';
  version[4] = 9;
  const auto kc = kind(crc), km = kind(magic), kv = kind(version);
  const bool distinct = kc == CheckpointError::Kind::CrcMismatch && km == CheckpointError::Kind::NotACheckpoint &&
                        kv == CheckpointError::Kind::UnsupportedVersion;
  return {same && distinct, std::string(same ? "save/load/save byte-identical" : "round trip differs") +
                                (distinct ? "; crc, magic and version errors distinct" : "; wrong error kinds")};
}

// ---- 9 ----
Outcome training_grid() {
  Xorshift64Star rng(2024);
  std::vector<std::size_t> counts(kAlphaGridSize, 0);
  const std::size_t draws = 100'000;
  bool on_grid = true;
  for (std::size_t i = 0; i < draws; ++i) {
    const double a = sample_strength(rng);
    const long k = std::lround(a * 10.0);
    on_grid = on_grid && k >= 0 && k <= 100 && a == static_cast<double>(k) / 10.0;
    if (on_grid) ++counts[static_cast<std::size_t>(k)];
  }
  const double expected = static_cast<double>(draws) / kAlphaGridSize;
  double lo = 1e300, hi = 0.0, chi2 = 0.0;
  for (std::size_t c : counts) {
    lo = std::min(lo, c / expected);
    hi = std::max(hi, c / expected);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // Band: every value within [0.5, 2] x expected; chi-square (100 dof) below 160.
  return {on_grid && lo >= 0.5 && hi <= 2.0 && chi2 < 160.0,
          std::string(on_grid ? "all on exact tenths" : "off-grid draw") + fmt("; freq ratio [%.3f", lo) +
              fmt(", %.3f]", hi) + fmt("; chi2 %.1f", chi2)};
}

// ---- 10, 11 ----
struct Served {
  fs::path model, images[2];
};

Outcome parity(const Served& s, ServeProcess& server, const fs::path& dir) {
  httplib::Client client("127.0.0.1", server.port());
  const std::pair<int, double> triples[] = {{0, 0.0}, {1, 2.5}, {0, 7.3}};
  int matched = 0;
  std::string detail;
  for (const auto& [img, alpha] : triples) {
    const fs::path out = dir / ("cli_" + std::to_string(img) + "_" + format_alpha(alpha) + ".png");
    const auto r = run_command(quote(STSC_CLI) + " stylize --model " + quote(s.model.string()) + " --input " +
                               quote(s.images[img].string()) + " --alpha " + format_alpha(alpha) + " --output " +
                               quote(out.string()));
    auto res = client.Post("/api/stylize?alpha=" + format_alpha(alpha), slurp(s.images[img]), "image/png");
    if (r.code == 0 && res && res->status == 200 && res->body == slurp(out)) ++matched;
  }
  return {matched == 3, std::to_string(matched) + "/3 (image, alpha) triples byte-identical, alpha 0 included"};
}

Outcome concurrency(const Served& s, ServeProcess& server) {
  const std::string bodies[2] = {slurp(s.images[0]), slurp(s.images[1])};
  const double alphas[4] = {0.0, 1.0, 4.2, 10.0};
  const auto model = load_model<InferenceScalar>(s.model);
  std::string serial[2][4];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      const auto out = stylize_image_bytes(model, read_file_bytes(s.images[i]), alphas[j]);
      serial[i][j].assign(out.png.begin(), out.png.end());
    }
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 16; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      httplib::Client c("127.0.0.1", server.port());
      auto res = c.Post("/api/stylize?alpha=" + format_alpha(alphas[i % 4]), bodies[i % 2], "image/png");
      return res && res->status == 200 ? res->body : std::string();
    }));
  }
  int matched = 0;
  for (int i = 0; i < 16; ++i) matched += futures[i].get() == serial[i % 2][i % 4];
  return {matched == 16, std::to_string(matched) + "/16 parallel responses equal serial references"};
}

}  // namespace

int main() {
  Scratch scratch;
  criterion(1, "strength gate", 5, gate_suite);
  criterion(2, "identity at zero strength", 30, identity_at_zero);
  criterion(3, "gradient suite", 120, gradient_suite);
  criterion(4, "brute-force oracles", 60, oracle_equivalence);

  std::optional<Overfit> fit;
  criterion(5, "overfit smoke", 600, [&] {
    fit = run_overfit();
    const double reduction = 1.0 - fit->after / fit->before;
    return Outcome{reduction >= 0.80, fmt("total at alpha 5: %.4e", fit->before) + fmt(" -> %.4e", fit->after) +
                                          fmt(" (%.1f%% lower, bound 80%%)", 100.0 * reduction)};
  });
  criterion(6, "strength responsiveness", 60, [&] {
    if (!fit) return Outcome{false, "overfit run unavailable"};
    bool ok = true;
    std::string d = "style loss at 0.1/1/5/10:";
    for (std::size_t i = 0; i < kProbes.size(); ++i) {
      d += fmt(" %.4e", fit->style_after[i]);
      if (i > 0) ok = ok && fit->style_after[i] <= fit->style_after[i - 1];
    }
    return Outcome{ok, d};
  });

  criterion(7, "eval harness", 60, eval_harness);
  criterion(8, "checkpoint format", 5, [&] { return checkpoint_format(scratch.path); });
  criterion(9, "training grid", 5, training_grid);

  Served served;
  served.model = scratch.path / "served.stsc";
  save_checkpoint(fit ? fit->trained : init_weights<float>(ArchitectureConfig{}, 0), served.model, ModelMeta{64, 0});
  Xorshift64Star rng(99);
  for (int i = 0; i < 2; ++i) {
    served.images[i] = scratch.path / ("img" + std::to_string(i) + ".png");
    save_image(synthetic_content<float>(i == 0 ? 64 : 80, rng), served.images[i]);
  }
  std::unique_ptr<ServeProcess> server;
  try {
    server = std::make_unique<ServeProcess>(quote(STSC_CLI) + " serve --port 0 --model " + quote(served.model.string()));
  } catch (const std::exception& e) {
    std::printf("could not start the service: %s\n", e.what());
  }
  criterion(10, "CLI/service parity", 30, [&] {
    return server ? parity(served, *server, scratch.path) : Outcome{false, "service not running"};
  });
  criterion(11, "service concurrency", 60, [&] {
    return server ? concurrency(served, *server) : Outcome{false, "service not running"};
  });

  std::printf("%s: %d of 11 criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
