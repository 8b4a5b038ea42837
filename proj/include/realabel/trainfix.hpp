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

// Training-side remedies: K-fold assignment, removal of training images whose
// label disagrees with a held-out model, and the softmax / sigmoid
// cross-entropy losses with analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/metrics.hpp"
#include "realabel/predictions.hpp"
#include "realabel/text.hpp"

namespace realabel {

struct FoldAssignment {
  RegistryPtr images;
  std::vector<std::uint32_t> fold_of;  // per image index
  std::uint32_t folds = 10;
  std::uint64_t seed = 0;

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(folds, 0);
    for (auto f : fold_of) ++s[f];
    return s;
  }

  std::uint32_t fold(std::string_view image_id) const { return fold_of[images->index_of(image_id)]; }

  // Same folds, over a subset of the images (in the subset's order).
  FoldAssignment restrict(std::span<const std::string> ids) const {
    FoldAssignment out;
    out.images = std::make_shared<const ImageRegistry>(std::vector<std::string>(ids.begin(), ids.end()));
    out.folds = folds;
    out.seed = seed;
    for (const auto& id : ids) out.fold_of.push_back(fold(id));
    return out;
  }
};

// Seeded shuffle, then fold = position mod F, so sizes differ by at most one.
inline FoldAssignment assign_folds(RegistryPtr images, std::uint32_t folds = 10, std::uint64_t seed = 0) {
  require(folds >= 2, "trainfix", "need at least 2 folds");
  require(folds <= images->size(), "trainfix",
          "fold count " + std::to_string(folds) + " exceeds image count " + std::to_string(images->size()));
  std::vector<std::size_t> order(images->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  FoldAssignment out;
  out.images = std::move(images);
  out.folds = folds;
  out.seed = seed;
  out.fold_of.resize(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) out.fold_of[order[pos]] = static_cast<std::uint32_t>(pos % folds);
  return out;
}

inline void write_folds(const FoldAssignment& f, const std::string& path) {
  auto out = text::open_output(path);
  out << "# folds=" << f.folds << " seed=" << f.seed << "\nimage_id,fold\n";
  for (std::size_t i = 0; i < f.fold_of.size(); ++i) out << text::csv_escape(f.images->id(i)) << ',' << f.fold_of[i] << '\n';
  if (!out) throw Error("io", "write failed: " + path);
}

inline FoldAssignment read_folds(const std::string& path) {
  auto in = text::open_input(path);
  FoldAssignment f;
  f.folds = 0;
  std::vector<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = text::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      std::string body(t.substr(1));
      std::size_t a = body.find("folds="), b = body.find("seed=");
      if (a != std::string::npos) f.folds = text::parse_int<std::uint32_t>(body.substr(a + 6, body.find(' ', a) - a - 6)).value_or(0);
      if (b != std::string::npos) f.seed = text::parse_int<std::uint64_t>(body.substr(b + 5)).value_or(0);
      continue;
    }
    if (t == "image_id,fold") continue;
    auto fields = text::split_csv(t);
    if (!fields || fields->size() != 2) throw ParseError(path, line_no, "expected image_id,fold");
    auto fold = text::parse_int<std::uint32_t>((*fields)[1]);
    if (!fold) throw ParseError(path, line_no, "invalid fold index");
    ids.push_back((*fields)[0]);
    f.fold_of.push_back(*fold);
  }
  if (f.folds == 0) {
    for (auto k : f.fold_of) f.folds = std::max(f.folds, k + 1);
  }
  for (auto k : f.fold_of) {
    if (k >= f.folds) throw Error("parse", path + ": fold index " + std::to_string(k) + " out of range");
  }
  f.images = std::make_shared<const ImageRegistry>(std::move(ids));
  return f;
}

struct CleanOptions {
  // Unset: keep an image iff the held-out top-1 equals its label. Set: keep it
  // iff the held-out probability of its label is at least this value.
  std::optional<double> min_prob;
};

struct CleanResult {
  std::vector<std::string> retained;
  std::vector<std::string> removed;
};

namespace detail {

inline std::set<std::uint32_t> parse_fold_list(const std::string& s, const std::string& model) {
  std::set<std::uint32_t> out;
  if (text::trim(s).empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    auto v = text::parse_int<std::uint32_t>(text::trim(std::string_view(s).substr(start, end - start)));
    if (!v) throw Error("provenance", model + ": invalid trained_folds entry");
    out.insert(*v);
    start = end + 1;
  }
  return out;
}

}  // namespace detail

// Each prediction set must declare `holdout_fold` (the fold it predicts) and
// `trained_folds` in its metadata; a set that trained on its own holdout fold
// is rejected.
inline CleanResult clean_dataset(std::span<const PredictionSet> fold_predictions, const OriginalLabels& original,
                                 const FoldAssignment& folds, const CleanOptions& options = {}) {
  if (options.min_prob) require(*options.min_prob >= 0.0 && *options.min_prob <= 1.0, "trainfix", "min_prob outside [0,1]");
  std::map<std::uint32_t, const PredictionSet*> by_fold;
  for (const auto& p : fold_predictions) {
    auto holdout_s = p.meta("holdout_fold");
    auto trained_s = p.meta("trained_folds");
    if (!holdout_s || !trained_s) {
      throw Error("provenance", p.model_name() + ": metadata must declare holdout_fold and trained_folds");
    }
    auto holdout = text::parse_int<std::uint32_t>(*holdout_s);
    if (!holdout || *holdout >= folds.folds) throw Error("provenance", p.model_name() + ": invalid holdout_fold");
    auto trained = detail::parse_fold_list(*trained_s, p.model_name());
    if (trained.count(*holdout)) {
      throw Error("leakage", p.model_name() + " was trained on fold " + std::to_string(*holdout) + ", which it is asked to clean");
    }
    if (!by_fold.emplace(*holdout, &p).second) {
      throw Error("provenance", "two prediction sets hold out fold " + std::to_string(*holdout));
    }
  }

  CleanResult out;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const std::string& id = original.images->id(i);
    auto idx = folds.images->find(id);
    if (!idx) throw Error("unknown-id", "image " + id + " has no fold");
    auto k = folds.fold_of[*idx];
    auto it = by_fold.find(k);
    if (it == by_fold.end()) throw Error("provenance", "no held-out predictions for fold " + std::to_string(k));
    const PredictionSet& p = *it->second;
    auto pi = p.images()->find(id);
    if (!pi || !p.has(*pi)) throw Error("missing-prediction", p.model_name() + ": no prediction for image " + id);
    bool keep;
    if (options.min_prob) {
      auto s = p.score(*pi, original[i]);
      keep = s && s->probability >= *options.min_prob;
    } else {
      keep = p.top1(*pi) == original[i];
    }
    (keep ? out.retained : out.removed).push_back(id);
  }
  return out;
}

inline OriginalLabels restrict_labels(const OriginalLabels& original, std::span<const std::string> ids) {
  OriginalLabels out;
  out.images = std::make_shared<const ImageRegistry>(std::vector<std::string>(ids.begin(), ids.end()));
  for (const auto& id : ids) out.labels.push_back(original.labels[original.images->index_of(id)]);
  return out;
}

inline void write_id_list(std::span<const std::string> ids, const std::string& path) {
  auto out = text::open_output(path);
  for (const auto& id : ids) out << id << '\n';
  if (!out) throw Error("io", "write failed: " + path);
}

struct LossValue {
  double loss = 0.0;
  std::vector<double> gradient;
};

namespace detail {

inline void require_finite(std::span<const double> z, const char* what) {
  for (double v : z) require(std::isfinite(v), "trainfix", std::string(what) + ": non-finite logit");
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// log(sum exp z) - z[target]; gradient softmax(z) - onehot(target).
inline LossValue softmax_ce(std::span<const double> logits, std::size_t target) {
  require(!logits.empty(), "trainfix", "softmax_ce: empty logits");
  require(target < logits.size(), "trainfix", "softmax_ce: target out of range");
  detail::require_finite(logits, "softmax_ce");
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  double lse = mx + std::log(sum);
  LossValue out;
  out.loss = lse - logits[target];
  out.gradient.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) out.gradient[c] = std::exp(logits[c] - lse);
  out.gradient[target] -= 1.0;
  return out;
}

// sum_c softplus(z_c) - t_c z_c; gradient sigmoid(z_c) - t_c.
inline LossValue sigmoid_bce(std::span<const double> logits, std::span<const double> targets) {
  require(logits.size() == targets.size(), "trainfix", "sigmoid_bce: logits and targets differ in length");
  detail::require_finite(logits, "sigmoid_bce");
  LossValue out;
  out.gradient.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    double t = targets[c];
    require(t == 0.0 || t == 1.0, "trainfix", "sigmoid_bce: targets must be 0 or 1");
    double z = logits[c];
    out.loss += detail::softplus(z) - t * z;
    double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.gradient[c] = s - t;
  }
  return out;
}

// Norm-wise relative error between an analytic gradient and central
// differences of `loss` at z.
template <typename Loss>
double gradient_check_error(std::vector<double> z, std::span<const double> analytic, Loss&& loss, double h = 1e-5) {
  require(z.size() == analytic.size(), "trainfix", "gradient_check_error: size mismatch");
  double diff = 0.0, na = 0.0, nf = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double keep = z[c];
    z[c] = keep + h;
    const double up = loss(z);
    z[c] = keep - h;
    const double down = loss(z);
    z[c] = keep;
    const double fd = (up - down) / (2 * h);
    diff += (fd - analytic[c]) * (fd - analytic[c]);
    na += analytic[c] * analytic[c];
    nf += fd * fd;
  }
  const double scale = std::sqrt(std::max(na, nf));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace realabel
