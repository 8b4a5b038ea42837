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

// Aggregates redundant yes/maybe/no answers into accept/reject decisions per
// (image, label) item.
//
// Model: each item has a binary latent state (present / absent). Rater r
// answers category k with probability confusion[r][state][k]; P(present) is a
// shared prior. Parameters are fitted by EM (Dawid & Skene, 1979), starting
// from majority-vote posteriors, which also fixes the present/absent labelling.
// Raters who did not answer an item simply contribute no factor for it.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "realabel/annotation.hpp"
#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/labels.hpp"
#include "realabel/log.hpp"
#include "realabel/manifest.hpp"
#include "realabel/parallel.hpp"
#include "realabel/proposals.hpp"
#include "realabel/tasking.hpp"

namespace realabel {

struct Item {
  std::size_t image = 0;
  ClassId cls{};

  auto operator<=>(const Item&) const = default;
};

inline constexpr const char* kVirtualRaterId = "original-label";

struct Observation {
  std::uint32_t rater;
  Verdict verdict;
};

struct AnswerMatrix {
  RegistryPtr images;
  std::vector<Item> items;  // sorted
  std::vector<std::string> raters;
  std::vector<std::vector<Observation>> by_item;
  std::optional<std::uint32_t> virtual_rater;

  std::optional<std::size_t> find(const Item& item) const {
    auto it = std::lower_bound(items.begin(), items.end(), item);
    if (it == items.end() || *it != item) return std::nullopt;
    return static_cast<std::size_t>(it - items.begin());
  }
};

// Injects the original label as an extra rater on every image whose original
// class is an animal: it answers `yes` on the (image, original label) item and
// `no` on the image's other items, and abstains on all other images. A rater
// that only ever answers `yes` would fit identical present/absent rows and
// carry no evidence, so the `no` answers are what make its error rates
// identifiable.
struct VirtualRaterConfig {
  const OriginalLabels* original = nullptr;
  const ClassManifest* manifest = nullptr;
};

// The item universe is every option of every label-assessment task. Answers to
// audit tasks are ignored; answers to unknown tasks are an error.
inline AnswerMatrix build_answer_matrix(std::span<const AnnotationTask> tasks, std::span<const RaterAnswer> answers,
                                        const RegistryPtr& images, const VirtualRaterConfig* virtual_rater = nullptr) {
  require(images != nullptr, "aggregation", "answer matrix needs the dataset image registry");
  AnswerMatrix m;
  m.images = images;
  std::unordered_map<std::string, const AnnotationTask*> by_id;
  for (const auto& t : tasks) {
    if (!by_id.emplace(t.task_id, &t).second) throw Error("data", "duplicate task id " + t.task_id);
    if (t.kind != TaskKind::LabelAssessment) continue;
    std::size_t img = images->index_of(t.image_id);
    for (ClassId c : t.options) m.items.push_back({img, c});
  }
  std::sort(m.items.begin(), m.items.end());
  m.items.erase(std::unique(m.items.begin(), m.items.end()), m.items.end());
  m.by_item.resize(m.items.size());

  std::map<std::string, std::uint32_t> rater_index;
  for (const auto& a : answers) rater_index.emplace(a.rater_id, 0);
  require(!rater_index.count(kVirtualRaterId), "aggregation", "rater id collides with the virtual rater id");
  for (auto& [id, idx] : rater_index) {
    idx = static_cast<std::uint32_t>(m.raters.size());
    m.raters.push_back(id);
  }

  for (const auto& a : answers) {
    auto it = by_id.find(a.task_id);
    if (it == by_id.end()) throw Error("unknown-id", "answer references unknown task " + a.task_id);
    const auto& task = *it->second;
    if (task.kind != TaskKind::LabelAssessment) continue;
    require(a.verdicts.size() == task.options.size(), "aggregation",
            "answer by " + a.rater_id + " to " + a.task_id + " has the wrong number of verdicts");
    std::size_t img = images->index_of(task.image_id);
    std::uint32_t r = rater_index.at(a.rater_id);
    for (std::size_t o = 0; o < task.options.size(); ++o) {
      m.by_item[*m.find({img, task.options[o]})].push_back({r, a.verdicts[o]});
    }
  }

  if (virtual_rater) {
    require(virtual_rater->original && virtual_rater->manifest, "aggregation",
            "virtual rater needs original labels and a class manifest");
    require_same_images(virtual_rater->original->images, images, "virtual rater");
    auto v = static_cast<std::uint32_t>(m.raters.size());
    m.raters.emplace_back(kVirtualRaterId);
    m.virtual_rater = v;
    const auto& original = *virtual_rater->original;
    for (std::size_t i = 0; i < original.size(); ++i) {
      if (!virtual_rater->manifest->is_animal(original[i])) continue;
      auto it = std::lower_bound(m.items.begin(), m.items.end(), Item{i, class_id(0)});
      for (; it != m.items.end() && it->image == i; ++it) {
        auto idx = static_cast<std::size_t>(it - m.items.begin());
        m.by_item[idx].push_back({v, it->cls == original[i] ? Verdict::Yes : Verdict::No});
      }
    }
  }
  return m;
}

// confusion[state][verdict]; state 0 = present, 1 = absent.
using Confusion = std::array<std::array<double, kVerdictCount>, 2>;

struct DawidSkeneOptions {
  double tol = 1e-6;
  int max_iter = 500;
};

struct RaterModel {
  RegistryPtr images;
  std::vector<std::string> raters;
  std::vector<Confusion> confusion;
  double prior = 0.5;
  std::vector<Item> items;
  std::vector<double> posterior;       // P(present | answers) per item
  std::vector<double> log_likelihood;  // one entry per EM iteration
  int iterations = 0;
  bool converged = false;

  std::optional<double> posterior_of(const Item& item) const {
    auto it = std::lower_bound(items.begin(), items.end(), item);
    if (it == items.end() || *it != item) return std::nullopt;
    return posterior[static_cast<std::size_t>(it - items.begin())];
  }
};

// Strict majority of `yes` among human answers; maybe counts as not-yes and
// ties reject. The virtual rater does not vote.
inline std::vector<char> majority_vote(const AnswerMatrix& m) {
  std::vector<char> accept(m.items.size(), 0);
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    std::size_t yes = 0, total = 0;
    for (const auto& o : m.by_item[i]) {
      if (m.virtual_rater && o.rater == *m.virtual_rater) continue;
      ++total;
      yes += o.verdict == Verdict::Yes;
    }
    accept[i] = 2 * yes > total;
  }
  return accept;
}

inline RaterModel run_dawid_skene(const AnswerMatrix& m, const DawidSkeneOptions& options = {}) {
  require(options.tol > 0 && options.max_iter >= 1, "config", "invalid EM options");
  const std::size_t n_items = m.items.size();
  const std::size_t n_raters = m.raters.size();
  for (std::size_t i = 0; i < n_items; ++i) {
    if (m.by_item[i].empty()) {
      throw Error("aggregation", "item (" + m.images->id(m.items[i].image) + ", " +
                                     std::to_string(to_int(m.items[i].cls)) + ") has zero answers");
    }
  }

  RaterModel model;
  model.images = m.images;
  model.raters = m.raters;
  model.items = m.items;
  model.posterior.assign(n_items, 0.0);
  Confusion uniform;
  for (auto& row : uniform) row.fill(1.0 / kVerdictCount);
  model.confusion.assign(n_raters, uniform);
  if (n_items == 0) {
    model.converged = true;
    return model;
  }

  // Per-rater observation lists for the M-step.
  std::vector<std::vector<std::pair<std::size_t, Verdict>>> by_rater(n_raters);
  for (std::size_t i = 0; i < n_items; ++i) {
    for (const auto& o : m.by_item[i]) by_rater[o.rater].emplace_back(i, o.verdict);
  }

  auto majority = majority_vote(m);
  for (std::size_t i = 0; i < n_items; ++i) {
    // Items answered only by the virtual rater start from its vote.
    bool human = std::any_of(m.by_item[i].begin(), m.by_item[i].end(),
                             [&](const Observation& o) { return !m.virtual_rater || o.rater != *m.virtual_rater; });
    model.posterior[i] = human ? (majority[i] ? 1.0 : 0.0) : 1.0;
  }

  std::vector<double> item_ll(n_items, 0.0);
  std::vector<Confusion> previous(n_raters, uniform);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    // M-step.
    double change = 0.0;
    double prior = 0.0;
    for (double t : model.posterior) prior += t;
    prior /= static_cast<double>(n_items);
    change = std::max(change, std::abs(prior - model.prior));
    model.prior = prior;
    parallel_for(n_raters, [&](std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r) {
        std::array<std::array<double, kVerdictCount>, 2> counts{};
        for (const auto& [i, v] : by_rater[r]) {
          counts[0][static_cast<std::size_t>(v)] += model.posterior[i];
          counts[1][static_cast<std::size_t>(v)] += 1.0 - model.posterior[i];
        }
        for (std::size_t s = 0; s < 2; ++s) {
          double total = counts[s][0] + counts[s][1] + counts[s][2];
          // A state with no weight leaves its row unidentified; keep it.
          if (total <= 0.0) continue;
          for (std::size_t k = 0; k < kVerdictCount; ++k) counts[s][k] /= total;
          model.confusion[r][s] = counts[s];
        }
      }
    }, 8);
    for (std::size_t r = 0; r < n_raters; ++r) {
      for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t k = 0; k < kVerdictCount; ++k) {
          change = std::max(change, std::abs(model.confusion[r][s][k] - previous[r][s][k]));
        }
      }
    }
    previous = model.confusion;

    // E-step.
    const double log_prior_present = std::log(model.prior);
    const double log_prior_absent = std::log1p(-model.prior);
    std::vector<std::array<std::array<double, kVerdictCount>, 2>> log_conf(n_raters);
    for (std::size_t r = 0; r < n_raters; ++r) {
      for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t k = 0; k < kVerdictCount; ++k) log_conf[r][s][k] = std::log(model.confusion[r][s][k]);
      }
    }
    parallel_for(n_items, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double lp = log_prior_present, la = log_prior_absent;
        for (const auto& o : m.by_item[i]) {
          lp += log_conf[o.rater][0][static_cast<std::size_t>(o.verdict)];
          la += log_conf[o.rater][1][static_cast<std::size_t>(o.verdict)];
        }
        double hi = std::max(lp, la);
        double ll = hi + std::log(std::exp(lp - hi) + std::exp(la - hi));
        item_ll[i] = ll;
        model.posterior[i] = std::exp(lp - ll);
      }
    }, 256);
    double ll = 0.0;
    for (double x : item_ll) ll += x;
    model.log_likelihood.push_back(ll);
    model.iterations = iter;
    if (iter > 1 && change < options.tol) {
      model.converged = true;
      break;
    }
  }
  if (!model.converged) {
    log::warn("dawid_skene_not_converged", {{"iterations", model.iterations}, {"tol", options.tol}});
  }
  return model;
}

struct PrPoint {
  double tau = 0.0;
  double precision = 1.0;
  double recall = 0.0;
  std::size_t accepted = 0;
  std::size_t hits = 0;
  std::size_t gold = 0;
};

// Acceptance scored against gold pairs over gold images; precision is 1 by
// convention when nothing is accepted.
inline PrecisionRecall score_acceptance(std::span<const Item> items, std::span<const char> accepted,
                                        const GoldStandard& gold) {
  require(!gold.empty(), "aggregation", "empty gold standard");
  std::size_t hits = 0, proposed = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!accepted[i]) continue;
    auto g = gold.sets.find(items[i].image);
    if (g == gold.sets.end()) continue;
    ++proposed;
    hits += contains_label(g->second, items[i].cls);
  }
  return make_precision_recall(hits, proposed, gold.pair_count());
}

// Distinct posteriors of gold-image items, plus 0 and a value just above 1.
inline std::vector<double> default_thresholds(const RaterModel& model, const GoldStandard& gold) {
  std::vector<double> t{0.0, std::nextafter(1.0, 2.0)};
  for (std::size_t i = 0; i < model.items.size(); ++i) {
    if (gold.sets.count(model.items[i].image)) t.push_back(model.posterior[i]);
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

// Items with posterior >= tau are accepted. Output sorted by tau.
inline std::vector<PrPoint> precision_recall_curve(const RaterModel& model, const GoldStandard& gold,
                                                   std::vector<double> thresholds) {
  require(!gold.empty(), "aggregation", "empty gold standard");
  require_same_images(model.images, gold.images, "precision_recall_curve");
  std::sort(thresholds.begin(), thresholds.end());
  // Gold-image items sorted by posterior ascending, with suffix hit counts.
  std::vector<std::pair<double, bool>> scored;
  for (std::size_t i = 0; i < model.items.size(); ++i) {
    auto g = gold.sets.find(model.items[i].image);
    if (g == gold.sets.end()) continue;
    scored.emplace_back(model.posterior[i], contains_label(g->second, model.items[i].cls));
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> suffix_hits(scored.size() + 1, 0);
  for (std::size_t i = scored.size(); i-- > 0;) suffix_hits[i] = suffix_hits[i + 1] + (scored[i].second ? 1 : 0);
  const std::size_t gold_pairs = gold.pair_count();
  std::vector<PrPoint> curve;
  for (double tau : thresholds) {
    auto first = std::lower_bound(scored.begin(), scored.end(), tau,
                                  [](const std::pair<double, bool>& p, double t) { return p.first < t; });
    auto pos = static_cast<std::size_t>(first - scored.begin());
    auto pr = make_precision_recall(suffix_hits[pos], scored.size() - pos, gold_pairs);
    curve.push_back({tau, pr.precision, pr.recall, pr.proposed, pr.hits, gold_pairs});
  }
  return curve;
}

inline std::vector<PrPoint> precision_recall_curve(const RaterModel& model, const GoldStandard& gold) {
  return precision_recall_curve(model, gold, default_thresholds(model, gold));
}

inline constexpr double kDefaultTargetPrecision = 0.95;

// Smallest tau on the curve whose gold precision reaches the target with at
// least one correct acceptance.
inline std::optional<double> choose_operating_point(std::span<const PrPoint> curve,
                                                    double target_precision = kDefaultTargetPrecision) {
  std::optional<double> best;
  for (const auto& p : curve) {
    if (p.hits > 0 && p.precision >= target_precision && (!best || p.tau < *best)) best = p.tau;
  }
  return best;
}

inline std::vector<char> accept_at(const RaterModel& model, double tau) {
  std::vector<char> out(model.items.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = model.posterior[i] >= tau;
  return out;
}

// Accepted items merged with the original labels of images that skipped review.
inline LabelSet finalize_labels(std::span<const Item> items, std::span<const char> accepted,
                                const UnanimityFilter& filter, const OriginalLabels& original) {
  LabelSet labels(original.images);
  for (std::size_t img : filter.skip) labels.add(img, original[img]);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (accepted[i]) labels.add(items[i].image, items[i].cls);
  }
  return labels;
}

inline LabelSet finalize_labels(const RaterModel& model, double tau, const UnanimityFilter& filter,
                                const OriginalLabels& original) {
  require(tau >= 0.0 && tau <= 1.0, "aggregation", "tau must lie in [0, 1]");
  require_same_images(model.images, original.images, "finalize_labels");
  auto accepted = accept_at(model, tau);
  return finalize_labels(model.items, accepted, filter, original);
}

inline nlohmann::ordered_json to_json(const RaterModel& model) {
  nlohmann::ordered_json j;
  j["iterations"] = model.iterations;
  j["converged"] = model.converged;
  j["prior"] = model.prior;
  j["final_log_likelihood"] = model.log_likelihood.empty() ? 0.0 : model.log_likelihood.back();
  j["log_likelihood"] = model.log_likelihood;
  auto raters = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < model.raters.size(); ++r) {
    nlohmann::ordered_json e;
    e["rater_id"] = model.raters[r];
    e["present"] = model.confusion[r][0];
    e["absent"] = model.confusion[r][1];
    raters.push_back(std::move(e));
  }
  j["raters"] = std::move(raters);
  return j;
}

inline nlohmann::ordered_json to_json(std::span<const PrPoint> curve) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : curve) {
    nlohmann::ordered_json e;
    e["tau"] = p.tau;
    e["precision"] = p.precision;
    e["recall"] = p.recall;
    e["accepted"] = p.accepted;
    e["hits"] = p.hits;
    arr.push_back(std::move(e));
  }
  return arr;
}

}  // namespace realabel
