/* Copyright 2026 The realabel Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Evaluation against multi-label ground truth: ReaL accuracy (top-1 and the
// k-th prediction alone), original single-label accuracy, preference rate
// between model and original labels, logit ensembling, and the split linear
// regression of ReaL accuracy on original accuracy with a slope Z-test.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/labels.hpp"
#include "realabel/predictions.hpp"
#include "realabel/text.hpp"

namespace realabel {

namespace detail {

// Position of each `from` image inside `to`, or nullopt when absent.
inline std::vector<std::optional<std::size_t>> map_images(const RegistryPtr& from, const RegistryPtr& to) {
  std::vector<std::optional<std::size_t>> out(from->size());
  if (same_images(from, to)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to->find(from->id(i));
  return out;
}

}  // namespace detail

struct AccuracyCount {
  std::size_t correct = 0;
  std::size_t evaluated = 0;

  double rate() const { return evaluated == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(evaluated); }
};

// Over non-excluded images: does the k-th ranked prediction fall in the set?
inline AccuracyCount real_accuracy_count(const PredictionSet& predictions, const LabelSet& labels, std::size_t k = 1) {
  require(k >= 1, "metrics", "k must be at least 1");
  auto map = detail::map_images(labels.images(), predictions.images());
  AccuracyCount count;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.excluded(i)) continue;
    std::optional<ClassId> ranked;
    if (map[i]) ranked = predictions.ranked(*map[i], k);
    if (!ranked) {
      throw Error("missing-prediction", predictions.model_name() + ": image " + labels.images()->id(i) + " lacks " +
                                            std::to_string(k) + " ranked predictions");
    }
    ++count.evaluated;
    count.correct += labels.contains(i, *ranked);
  }
  return count;
}

inline double real_accuracy(const PredictionSet& predictions, const LabelSet& labels, std::size_t k = 1) {
  return real_accuracy_count(predictions, labels, k).rate();
}

inline AccuracyCount original_accuracy_count(const PredictionSet& predictions, const OriginalLabels& original) {
  auto map = detail::map_images(original.images, predictions.images());
  AccuracyCount count;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (!map[i] || !predictions.has(*map[i])) {
      throw Error("missing-prediction", predictions.model_name() + ": no prediction for image " + original.images->id(i));
    }
    ++count.evaluated;
    count.correct += predictions.top1(*map[i]) == original[i];
  }
  return count;
}

inline double original_accuracy(const PredictionSet& predictions, const OriginalLabels& original) {
  return original_accuracy_count(predictions, original).rate();
}

// The original labels scored as if they were a model: one score per image.
inline PredictionSet original_as_predictions(const OriginalLabels& original, std::int32_t num_classes,
                                             std::string name = "original-labels") {
  PredictionSet p(std::move(name), original.images, num_classes);
  for (std::size_t i = 0; i < original.size(); ++i) p.set_row(i, {{original[i], 0.0, 1.0}});
  return p;
}

struct AccuracyReport {
  std::string model_name;
  double original_top1 = 0.0;
  double real_top1 = 0.0;
  double real_top2 = 0.0;
  double real_top3 = 0.0;
  std::size_t evaluated_image_count = 0;
};

inline AccuracyReport accuracy_report(const PredictionSet& predictions, const LabelSet& labels,
                                      const OriginalLabels* original = nullptr) {
  AccuracyReport r;
  r.model_name = predictions.model_name();
  auto top1 = real_accuracy_count(predictions, labels, 1);
  r.real_top1 = top1.rate();
  r.evaluated_image_count = top1.evaluated;
  r.real_top2 = real_accuracy(predictions, labels, 2);
  r.real_top3 = real_accuracy(predictions, labels, 3);
  if (original) r.original_top1 = original_accuracy(predictions, *original);
  return r;
}

inline nlohmann::ordered_json to_json(const AccuracyReport& r) {
  nlohmann::ordered_json j;
  j["model_name"] = r.model_name;
  j["original_top1"] = r.original_top1;
  j["real_top1"] = r.real_top1;
  j["real_top2"] = r.real_top2;
  j["real_top3"] = r.real_top3;
  j["evaluated_image_count"] = r.evaluated_image_count;
  return j;
}

struct PreferenceResult {
  double rate = 0.0;
  std::size_t n_discriminating = 0;
  std::size_t model_preferred = 0;
};

// Among non-excluded images where the model's top-1 differs from the original
// label and exactly one of the two is in the label set: how often is it the
// model's?
inline PreferenceResult preference_rate(const PredictionSet& predictions, const OriginalLabels& original,
                                        const LabelSet& labels) {
  require_same_images(original.images, labels.images(), "preference_rate");
  auto map = detail::map_images(original.images, predictions.images());
  PreferenceResult r;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (labels.excluded(i)) continue;
    if (!map[i]) throw Error("missing-prediction", predictions.model_name() + ": no prediction for image " + original.images->id(i));
    ClassId predicted = predictions.top1(*map[i]);
    if (predicted == original[i]) continue;
    bool model_ok = labels.contains(i, predicted);
    bool label_ok = labels.contains(i, original[i]);
    if (model_ok == label_ok) continue;
    ++r.n_discriminating;
    r.model_preferred += model_ok;
  }
  require(r.n_discriminating > 0, "metrics", "no discriminating images");
  r.rate = static_cast<double>(r.model_preferred) / static_cast<double>(r.n_discriminating);
  return r;
}

// Weighted sum of dense logits per (image, class); probabilities re-derived by
// softmax. Ranking ties still break toward the lower class id.
inline PredictionSet ensemble_logits(std::span<const PredictionSet> models, std::span<const double> weights = {}) {
  require(!models.empty(), "metrics", "empty ensemble");
  require(weights.empty() || weights.size() == models.size(), "metrics", "one weight per model required");
  const auto& first = models.front();
  std::string name = "ensemble(";
  for (std::size_t m = 0; m < models.size(); ++m) {
    require_same_images(models[m].images(), first.images(), "ensemble_logits");
    require(models[m].num_classes() == first.num_classes(), "metrics", "ensemble members disagree on class count");
    if (!models[m].dense()) {
      throw Error("metrics", models[m].model_name() +
                                 " has sparse predictions; ensembling needs dense logits (export the model densely)");
    }
    name += (m ? "+" : "") + models[m].model_name();
  }
  name += ")";
  PredictionSet out(name, first.images(), first.num_classes());
  for (std::size_t i = 0; i < first.image_count(); ++i) {
    std::vector<Score> row(static_cast<std::size_t>(first.num_classes()));
    for (std::size_t c = 0; c < row.size(); ++c) row[c].cls = class_id(static_cast<std::int64_t>(c));
    for (std::size_t m = 0; m < models.size(); ++m) {
      double w = weights.empty() ? 1.0 : weights[m];
      auto src = models[m].row(i);
      for (std::size_t c = 0; c < row.size(); ++c) row[c].logit += w * src[c].logit;
    }
    out.set_row(i, std::move(row));
  }
  out.derive_probabilities();
  return out;
}

struct RegressionPoint {
  std::string model;
  double original = 0.0;  // x
  double real = 0.0;      // y
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_std_error = 0.0;
  std::size_t n = 0;
  std::vector<std::string> models;
};

struct RegressionResult {
  LineFit first;   // lower original accuracies
  LineFit second;  // higher original accuracies
  double z_statistic = 0.0;
  double p_value = 1.0;  // two-sided, normal reference
};

// Ordinary least squares y = intercept + slope * x with the classical slope
// standard error sqrt(RSS / (n - 2) / Sxx).
inline LineFit fit_line(std::span<const RegressionPoint> points) {
  require(points.size() >= 3, "metrics", "regression needs at least 3 points");
  const auto n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& p : points) {
    mx += p.original;
    my += p.real;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& p : points) {
    sxx += (p.original - mx) * (p.original - mx);
    sxy += (p.original - mx) * (p.real - my);
  }
  require(sxx > 0.0, "metrics", "degenerate regression: no variance in original accuracy");
  LineFit fit;
  fit.n = points.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0;
  for (const auto& p : points) {
    double r = p.real - (fit.intercept + fit.slope * p.original);
    rss += r * r;
  }
  fit.slope_std_error = std::sqrt(rss / (n - 2.0) / sxx);
  for (const auto& p : points) fit.models.push_back(p.model);
  return fit;
}

inline double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Orders points by original accuracy and fits the lower floor(n/2) and the
// remaining upper half separately, then tests the slope difference with
// z = (b1 - b2) / sqrt(se1^2 + se2^2).
inline RegressionResult split_regression(std::vector<RegressionPoint> points) {
  require(points.size() >= 6, "metrics", "split regression needs at least 3 points per half");
  std::sort(points.begin(), points.end(), [](const RegressionPoint& a, const RegressionPoint& b) {
    if (a.original != b.original) return a.original < b.original;
    return a.real < b.real;
  });
  std::size_t half = points.size() / 2;
  RegressionResult r;
  r.first = fit_line(std::span(points).subspan(0, half));
  r.second = fit_line(std::span(points).subspan(half));
  double diff = r.first.slope - r.second.slope;
  double se = std::hypot(r.first.slope_std_error, r.second.slope_std_error);
  // Slopes equal up to rounding (e.g. exactly collinear points) test as z = 0.
  if (std::abs(diff) <= 1e-12 * std::max({1.0, std::abs(r.first.slope), std::abs(r.second.slope)})) {
    r.z_statistic = 0.0;
    r.p_value = 1.0;
  } else if (se == 0.0) {
    r.z_statistic = diff > 0 ? INFINITY : -INFINITY;
    r.p_value = 0.0;
  } else {
    r.z_statistic = diff / se;
    r.p_value = two_sided_normal_p(r.z_statistic);
  }
  return r;
}

inline nlohmann::ordered_json to_json(const LineFit& f) {
  nlohmann::ordered_json j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["slope_std_error"] = f.slope_std_error;
  j["n"] = f.n;
  j["models"] = f.models;
  return j;
}

inline nlohmann::ordered_json to_json(const RegressionResult& r) {
  nlohmann::ordered_json j;
  j["first_half"] = to_json(r.first);
  j["second_half"] = to_json(r.second);
  j["z_statistic"] = std::isfinite(r.z_statistic) ? nlohmann::ordered_json(r.z_statistic)
                                                  : nlohmann::ordered_json(r.z_statistic > 0 ? "inf" : "-inf");
  j["p_value"] = r.p_value;
  return j;
}

// CSV `model,real_acc,orig_acc`. A table whose values exceed 1 is read as
// percentages and rescaled to [0, 1].
inline std::vector<RegressionPoint> load_accuracy_table(const std::string& path) {
  auto in = text::open_input(path);
  std::vector<RegressionPoint> points;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto fields = text::split_csv(trimmed);
    if (!fields || fields->size() != 3) throw ParseError(path, line_no, "expected model,real_acc,orig_acc");
    if (!header_seen) {
      header_seen = true;
      if ((*fields)[0] == "model") continue;
    }
    auto real = text::parse_double((*fields)[1]);
    auto orig = text::parse_double((*fields)[2]);
    if (!real || !orig || *real < 0 || *orig < 0) throw ParseError(path, line_no, "invalid accuracy value");
    points.push_back({std::string(text::trim((*fields)[0])), *orig, *real});
  }
  bool percent = std::any_of(points.begin(), points.end(), [](const auto& p) { return p.original > 1.0 || p.real > 1.0; });
  if (percent) {
    for (auto& p : points) {
      p.original /= 100.0;
      p.real /= 100.0;
    }
  }
  for (const auto& p : points) {
    if (p.original > 1.0 || p.real > 1.0) throw Error("data", path + ": accuracy above 100% for " + p.model);
  }
  return points;
}

// One model name per line; blank lines and `#` comments are skipped.
inline std::vector<std::string> load_name_list(const std::string& path) {
  auto in = text::open_input(path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    names.emplace_back(t);
  }
  return names;
}

inline std::vector<RegressionPoint> select_points(std::span<const RegressionPoint> points,
                                                  std::span<const std::string> include,
                                                  std::span<const std::string> exclude) {
  std::set<std::string> inc(include.begin(), include.end()), exc(exclude.begin(), exclude.end());
  std::set<std::string> known;
  for (const auto& p : points) known.insert(p.model);
  for (const auto& name : inc) require(known.count(name), "unknown-id", "unknown model in include-list: " + name);
  for (const auto& name : exc) require(known.count(name), "unknown-id", "unknown model in exclude-list: " + name);
  std::vector<RegressionPoint> out;
  for (const auto& p : points) {
    if (!inc.empty() && !inc.count(p.model)) continue;
    if (exc.count(p.model)) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace realabel
