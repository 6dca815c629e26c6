#pragma once

// Loss-ratio evaluation of a strength-conditioned model against dedicated
// fixed-strength baselines. For each strength alpha and style s:
//   ratio_X(alpha, s) = loss_X(model, alpha, s) / loss_X(baseline_alpha, alpha, s)
// for X in {total, content, style}; reported as mean and population std of
// the per-style ratios.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stsc/encoder.hpp"
#include "stsc/error.hpp"
#include "stsc/loss.hpp"
#include "stsc/trainer.hpp"
#include "stsc/transformer.hpp"

namespace stsc {

template <typename T>
struct NamedStyle {
  std::string name;
  StyleTarget<T> target;
};

struct LossTableRow {
  std::string style;
  double alpha = 0.0;
  LossBreakdown loss;  // mean over content images
};

/// Mean LossBreakdown over `contents` for every (style, alpha), style-major.
/// Weights are only read.
template <typename T>
std::vector<LossTableRow> evaluate_model(const TransformerWeights<T>& model, std::span<const Tensor4<T>> contents,
                                         std::span<const NamedStyle<T>> styles, std::span<const double> strengths,
                                         const LossWeights& lw, const EncoderWeights<T>& enc) {
  if (contents.empty()) throw Error("evaluate_model: no content images");
  if (styles.empty()) throw Error("evaluate_model: no styles");
  if (strengths.empty()) throw Error("evaluate_model: no strengths");
  std::vector<LossTableRow> rows;
  for (const auto& st : styles) {
    for (double alpha : strengths) {
      LossBreakdown mean;
      for (const auto& x : contents) {
        const Tensor4<T> y = stylize(model, x, alpha);
        const LossBreakdown b = evaluate_loss(x, y, st.target, alpha, lw, enc);
        mean.content += b.content;
        mean.style += b.style;
        mean.tv += b.tv;
      }
      const double n = static_cast<double>(contents.size());
      mean.content /= n;
      mean.style /= n;
      mean.tv /= n;
      mean.alpha_used = alpha;
      mean.total = LossBreakdown::combine(mean.content, mean.style, mean.tv, alpha, lw);
      rows.push_back({st.name, alpha, mean});
    }
  }
  return rows;
}

struct RatioStat {
  double mean = 0.0;
  double std = 0.0;
};

struct RatioRow {
  double alpha = 0.0;
  RatioStat total, content, style;
};

struct RawEntry {
  std::string style;
  double alpha = 0.0;
  std::string model;  // "conditioned" or "baseline"
  LossBreakdown loss;
};

struct RatioReport {
  std::vector<std::string> styles;
  std::vector<double> strengths;
  std::vector<RatioRow> rows;  // one per strength
  std::vector<RawEntry> raw;   // per style, strength and model
};

/// Mean and population standard deviation.
inline RatioStat mean_std(std::span<const double> xs) {
  RatioStat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

/// Rebuilds ratio rows from raw entries alone.
inline std::vector<RatioRow> ratio_rows_from_raw(const std::vector<RawEntry>& raw, const std::vector<std::string>& styles,
                                                 const std::vector<double>& strengths) {
  auto find = [&](const std::string& style, double alpha, const char* model) -> const LossBreakdown& {
    for (const auto& e : raw)
      if (e.style == style && e.alpha == alpha && e.model == model) return e.loss;
    throw Error("ratio report: missing raw entry for style " + style);
  };
  std::vector<RatioRow> rows;
  for (double alpha : strengths) {
    std::vector<double> rt, rc, rs;
    for (const auto& style : styles) {
      const LossBreakdown& a = find(style, alpha, "conditioned");
      const LossBreakdown& b = find(style, alpha, "baseline");
      rt.push_back(a.total / b.total);
      rc.push_back(a.content / b.content);
      rs.push_back(a.style / b.style);
    }
    rows.push_back({alpha, mean_std(rt), mean_std(rc), mean_std(rs)});
  }
  return rows;
}

/// One style with its own conditioned model and per-strength baselines.
template <typename T>
struct StyleComparison {
  NamedStyle<T> style;
  const TransformerWeights<T>* model = nullptr;
  std::map<double, const TransformerWeights<T>*> baselines;
};

template <typename T>
RatioReport loss_ratio(std::span<const StyleComparison<T>> comparisons, std::span<const Tensor4<T>> contents,
                       std::span<const double> strengths, const LossWeights& lw, const EncoderWeights<T>& enc) {
  if (comparisons.empty()) throw Error("loss_ratio: no styles");
  RatioReport report;
  report.strengths.assign(strengths.begin(), strengths.end());
  for (const auto& cmp : comparisons) {
    for (double alpha : strengths)
      if (!cmp.baselines.count(alpha) || cmp.baselines.at(alpha) == nullptr) {
        throw Error("loss_ratio: no baseline model for strength " + std::to_string(alpha) + " (style " +
                    cmp.style.name + ")");
      }
  }
  for (const auto& cmp : comparisons) {
    report.styles.push_back(cmp.style.name);
    std::span<const NamedStyle<T>> one(&cmp.style, 1);
    const auto conditioned = evaluate_model(*cmp.model, contents, one, strengths, lw, enc);
    for (std::size_t k = 0; k < strengths.size(); ++k) {
      const double alpha = strengths[k];
      const double single[] = {alpha};
      const auto base = evaluate_model(*cmp.baselines.at(alpha), contents, one, std::span<const double>(single), lw, enc);
      report.raw.push_back({cmp.style.name, alpha, "conditioned", conditioned[k].loss});
      report.raw.push_back({cmp.style.name, alpha, "baseline", base[0].loss});
    }
  }
  report.rows = ratio_rows_from_raw(report.raw, report.styles, report.strengths);
  return report;
}

/// One conditioned model and one baseline set shared by every style.
template <typename T>
RatioReport loss_ratio(const TransformerWeights<T>& model, const std::map<double, const TransformerWeights<T>*>& baselines,
                       std::span<const Tensor4<T>> contents, std::span<const NamedStyle<T>> styles,
                       std::span<const double> strengths, const LossWeights& lw, const EncoderWeights<T>& enc) {
  std::vector<StyleComparison<T>> cmps;
  for (const auto& s : styles) cmps.push_back({s, &model, baselines});
  return loss_ratio<T>(std::span<const StyleComparison<T>>(cmps), contents, strengths, lw, enc);
}

/// A baseline trained at a single constant strength.
template <typename T>
TrainResult<T> train_fixed_strength_baseline(const TrainConfig& cfg, double alpha_fixed, const EncoderWeights<T>& enc) {
  return train<T>(cfg, enc, alpha_fixed);
}

template <typename T>
TrainResult<T> train_fixed_strength_baseline(const TrainConfig& cfg, double alpha_fixed, std::span<const Tensor4<T>> contents,
                                             const Tensor4<T>& style, const EncoderWeights<T>& enc) {
  return train_in_memory<T>(cfg, contents, style, enc, alpha_fixed);
}

// ---- serialization ----

inline nlohmann::json report_to_json(const RatioReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    auto stat = [](const RatioStat& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
    rows.push_back({{"alpha", row.alpha}, {"total", stat(row.total)}, {"content", stat(row.content)}, {"style", stat(row.style)}});
  }
  nlohmann::json raw = nlohmann::json::array();
  for (const auto& e : r.raw) {
    raw.push_back({{"style", e.style},
                   {"alpha", e.alpha},
                   {"model", e.model},
                   {"content", e.loss.content},
                   {"style_loss", e.loss.style},
                   {"tv", e.loss.tv},
                   {"total", e.loss.total}});
  }
  return {{"styles", r.styles}, {"strengths", r.strengths}, {"rows", rows}, {"raw", raw}};
}

inline RatioReport report_from_json(const nlohmann::json& j) {
  RatioReport r;
  try {
    j.at("styles").get_to(r.styles);
    j.at("strengths").get_to(r.strengths);
    for (const auto& row : j.at("rows")) {
      auto stat = [](const nlohmann::json& s) { return RatioStat{s.at("mean").get<double>(), s.at("std").get<double>()}; };
      r.rows.push_back({row.at("alpha").get<double>(), stat(row.at("total")), stat(row.at("content")), stat(row.at("style"))});
    }
    for (const auto& e : j.at("raw")) {
      RawEntry re;
      re.style = e.at("style").get<std::string>();
      re.alpha = e.at("alpha").get<double>();
      re.model = e.at("model").get<std::string>();
      re.loss.content = e.at("content").get<double>();
      re.loss.style = e.at("style_loss").get<double>();
      re.loss.tv = e.at("tv").get<double>();
      re.loss.total = e.at("total").get<double>();
      re.loss.alpha_used = re.alpha;
      r.raw.push_back(re);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed ratio report JSON: ") + e.what());
  }
  return r;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header: style,alpha,model,content,style_loss,tv,total
inline std::string report_to_csv(const RatioReport& r) {
  std::string out = "style,alpha,model,content,style_loss,tv,total\n";
  for (const auto& e : r.raw) {
    out += e.style + "," + format_double(e.alpha) + "," + e.model + "," + format_double(e.loss.content) + "," +
           format_double(e.loss.style) + "," + format_double(e.loss.tv) + "," + format_double(e.loss.total) + "\n";
  }
  return out;
}

inline std::vector<RawEntry> raw_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "style,alpha,model,content,style_loss,tv,total") {
    throw Error("ratio CSV: unexpected header");
  }
  std::vector<RawEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error("ratio CSV: expected 7 columns in line: " + line);
    RawEntry e;
    e.style = f[0];
    e.alpha = std::stod(f[1]);
    e.model = f[2];
    e.loss.content = std::stod(f[3]);
    e.loss.style = std::stod(f[4]);
    e.loss.tv = std::stod(f[5]);
    e.loss.total = std::stod(f[6]);
    e.loss.alpha_used = e.alpha;
    out.push_back(e);
  }
  return out;
}

}  // namespace stsc
