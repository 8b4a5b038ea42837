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

// Per-class views of the multi-label ground truth: the accuracy of a predictor
// that picks uniformly among an image's labels, label co-occurrence, sorted
// per-class accuracy curves, and the mistake-type audit (task generation and
// aggregation of rater categories).

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "realabel/annotation.hpp"
#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/labels.hpp"
#include "realabel/log.hpp"
#include "realabel/manifest.hpp"
#include "realabel/metrics.hpp"
#include "realabel/predictions.hpp"
#include "realabel/tasking.hpp"
#include "realabel/text.hpp"

namespace realabel {

namespace detail {

// Images that take part in per-class analysis: evaluated, and the original
// label is one of the image's labels.
inline bool qualifies(const LabelSet& labels, const OriginalLabels& original, std::size_t i) {
  return !labels.excluded(i) && labels.contains(i, original[i]);
}

// Fisher-Yates with raw engine output, so orders do not depend on the
// standard library's distribution implementations.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Keyed by original-label class; classes without qualifying images are absent.
inline std::map<ClassId, double> oracle_accuracy(const LabelSet& labels, const OriginalLabels& original) {
  require_same_images(labels.images(), original.images, "oracle_accuracy");
  std::map<ClassId, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (!detail::qualifies(labels, original, i)) continue;
    auto& [sum, n] = acc[original[i]];
    sum += 1.0 / static_cast<double>(labels.labels(i).size());
    ++n;
  }
  std::map<ClassId, double> out;
  for (const auto& [c, v] : acc) out[c] = v.first / static_cast<double>(v.second);
  return out;
}

inline std::set<ClassId> ambiguous_classes(const std::map<ClassId, double>& oracle, const ClassManifest& manifest,
                                           double ceiling = 0.90) {
  std::set<ClassId> out;
  for (const auto& [c, acc] : oracle) {
    if (acc < ceiling && !manifest.is_finegrained_animal(c)) out.insert(c);
  }
  return out;
}

struct Cooccurrence {
  ClassId cls{};
  double rate = 0.0;
  std::size_t count = 0;
};

// Over images whose set contains `anchor`: the fraction that also carry each
// other class. Sorted by rate descending, then class id.
inline std::vector<Cooccurrence> cooccurrence(const LabelSet& labels, ClassId anchor, std::size_t top_n) {
  std::size_t anchored = 0;
  std::map<ClassId, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels.contains(i, anchor)) continue;
    ++anchored;
    for (ClassId c : labels.labels(i)) {
      if (c != anchor) ++counts[c];
    }
  }
  if (anchored == 0) throw Error("unknown-id", "class " + std::to_string(to_int(anchor)) + " appears in no label set");
  std::vector<Cooccurrence> out;
  for (const auto& [c, n] : counts) out.push_back({c, static_cast<double>(n) / static_cast<double>(anchored), n});
  std::sort(out.begin(), out.end(), [](const Cooccurrence& a, const Cooccurrence& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.cls < b.cls;
  });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

// Top-1 accuracy against the original label per original-label class, over
// qualifying images only.
inline std::map<ClassId, double> per_class_accuracy(const PredictionSet& predictions, const LabelSet& labels,
                                                    const OriginalLabels& original) {
  require_same_images(labels.images(), original.images, "per_class_accuracy");
  auto map = detail::map_images(original.images, predictions.images());
  std::map<ClassId, std::pair<std::size_t, std::size_t>> acc;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (!detail::qualifies(labels, original, i)) continue;
    if (!map[i] || !predictions.has(*map[i])) {
      throw Error("missing-prediction", predictions.model_name() + ": no prediction for image " + original.images->id(i));
    }
    auto& [hit, n] = acc[original[i]];
    hit += predictions.top1(*map[i]) == original[i];
    ++n;
  }
  std::map<ClassId, double> out;
  for (const auto& [c, v] : acc) out[c] = static_cast<double>(v.first) / static_cast<double>(v.second);
  return out;
}

struct ClassReport {
  ClassId cls{};
  double oracle_accuracy = 0.0;
  std::map<std::string, double> model_accuracies;
  std::vector<Cooccurrence> top_cooccurring;
  std::size_t n_images = 0;
};

inline std::vector<ClassReport> class_reports(std::span<const ClassId> classes, std::span<const PredictionSet> models,
                                              const LabelSet& labels, const OriginalLabels& original,
                                              std::size_t top_n = 3) {
  auto oracle = oracle_accuracy(labels, original);
  std::vector<std::map<ClassId, double>> per_model;
  for (const auto& m : models) per_model.push_back(per_class_accuracy(m, labels, original));
  std::map<ClassId, std::size_t> counts;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (detail::qualifies(labels, original, i)) ++counts[original[i]];
  }
  std::vector<ClassReport> out;
  for (ClassId c : classes) {
    auto it = oracle.find(c);
    if (it == oracle.end()) continue;
    ClassReport r;
    r.cls = c;
    r.oracle_accuracy = it->second;
    r.n_images = counts[c];
    for (std::size_t m = 0; m < models.size(); ++m) r.model_accuracies[models[m].model_name()] = per_model[m].at(c);
    r.top_cooccurring = cooccurrence(labels, c, top_n);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const ClassReport& r, const ClassManifest* manifest = nullptr) {
  nlohmann::ordered_json j;
  j["class_id"] = to_int(r.cls);
  if (manifest && manifest->contains(r.cls)) j["name"] = manifest->at(r.cls).display_name;
  j["oracle_accuracy"] = r.oracle_accuracy;
  j["model_accuracies"] = r.model_accuracies;
  auto co = nlohmann::ordered_json::array();
  for (const auto& c : r.top_cooccurring) {
    nlohmann::ordered_json e;
    e["class_id"] = to_int(c.cls);
    if (manifest && manifest->contains(c.cls)) e["name"] = manifest->at(c.cls).display_name;
    e["rate"] = c.rate;
    co.push_back(std::move(e));
  }
  j["top_cooccurring"] = std::move(co);
  j["n_images"] = r.n_images;
  return j;
}

struct AccuracyCurve {
  std::string name;  // model name, or "oracle"
  std::vector<double> sorted;
};

// One ascending curve per model plus the oracle's, over the classes of the
// subset that have qualifying images.
inline std::vector<AccuracyCurve> class_accuracy_curves(std::span<const PredictionSet> models, const LabelSet& labels,
                                                        const OriginalLabels& original,
                                                        const std::set<ClassId>& subset) {
  require(!subset.empty(), "analysis", "empty class subset");
  auto oracle = oracle_accuracy(labels, original);
  auto collect = [&](const std::map<ClassId, double>& acc) {
    std::vector<double> v;
    for (ClassId c : subset) {
      auto it = acc.find(c);
      if (it != acc.end()) v.push_back(it->second);
    }
    std::sort(v.begin(), v.end());
    return v;
  };
  std::vector<AccuracyCurve> out(models.size() + 1);
  parallel_for(models.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      out[m] = {models[m].model_name(), collect(per_class_accuracy(models[m], labels, original))};
    }
  }, 1);
  out.back() = {"oracle", collect(oracle)};
  return out;
}

// Long format: curve,rank,accuracy.
inline void write_curves_csv(std::span<const AccuracyCurve> curves, const std::string& path) {
  auto out = text::open_output(path);
  out << "curve,rank,accuracy\n";
  for (const auto& c : curves) {
    for (std::size_t r = 0; r < c.sorted.size(); ++r) {
      out << text::csv_escape(c.name) << ',' << r << ',' << text::format_double(c.sorted[r]) << '\n';
    }
  }
  if (!out) throw Error("io", "write failed: " + path);
}

struct AuditOptions {
  std::size_t exemplars_per_class = 3;
  std::size_t sample_size = 100;
  std::uint64_t seed = 0;
  int required_raters = 5;
};

inline std::string audit_task_id(std::string_view model, AccuracyMetric metric, std::string_view image_id) {
  std::string key = "audit|";
  key += model;
  key += '|';
  key += metric_name(metric);
  key += '|';
  key += image_id;
  return "a" + text::hex64(text::fnv1a64(key));
}

// Samples images the model gets wrong under `metric` and packages each with
// the predicted label, the label(s) counted as correct, and exemplar images
// for every correct label.
inline std::vector<AnnotationTask> make_audit_tasks(const PredictionSet& predictions, AccuracyMetric metric,
                                                    const LabelSet& labels, const OriginalLabels& original,
                                                    const AuditOptions& options) {
  require_same_images(labels.images(), original.images, "make_audit_tasks");
  auto map = detail::map_images(original.images, predictions.images());
  std::vector<std::size_t> mistakes;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (!map[i] || !predictions.has(*map[i])) {
      throw Error("missing-prediction", predictions.model_name() + ": no prediction for image " + original.images->id(i));
    }
    ClassId p = predictions.top1(*map[i]);
    bool wrong = metric == AccuracyMetric::Original ? p != original[i] : (!labels.excluded(i) && !labels.contains(i, p));
    if (wrong) mistakes.push_back(i);
  }
  std::size_t n = options.sample_size;
  if (n > mistakes.size()) {
    log::warn("audit_sample_clamped", {{"model", predictions.model_name()},
                                       {"metric", metric_name(metric)},
                                       {"requested", n},
                                       {"available", mistakes.size()}});
    n = mistakes.size();
  }
  detail::seeded_shuffle(mistakes, options.seed);
  mistakes.resize(n);
  std::sort(mistakes.begin(), mistakes.end());

  // Per class, one seeded order of the images carrying it, shared by all tasks.
  std::map<ClassId, std::vector<std::size_t>> pools;
  auto pool = [&](ClassId c) -> const std::vector<std::size_t>& {
    auto it = pools.find(c);
    if (it != pools.end()) return it->second;
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels.contains(i, c)) v.push_back(i);
    }
    detail::seeded_shuffle(v, options.seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(to_int(c)) + 1)));
    return pools.emplace(c, std::move(v)).first->second;
  };

  std::vector<AnnotationTask> tasks;
  for (std::size_t i : mistakes) {
    AuditPayload payload;
    payload.model = predictions.model_name();
    payload.metric = metric;
    payload.predicted = predictions.top1(*map[i]);
    if (metric == AccuracyMetric::Original) {
      payload.correct = {original[i]};
    } else {
      payload.correct.assign(labels.labels(i).begin(), labels.labels(i).end());
    }
    for (ClassId c : payload.correct) {
      std::vector<std::string> ids;
      for (std::size_t e : pool(c)) {
        if (ids.size() >= options.exemplars_per_class) break;
        if (e != i) ids.push_back(original.images->id(e));
      }
      payload.exemplars.emplace_back(c, std::move(ids));
    }
    AnnotationTask t;
    t.kind = TaskKind::MistakeAudit;
    t.image_id = original.images->id(i);
    t.task_id = audit_task_id(payload.model, metric, t.image_id);
    t.required_raters = options.required_raters;
    t.audit = std::move(payload);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

struct AuditOutcome {
  std::string model;
  AccuracyMetric metric = AccuracyMetric::Original;
  std::array<double, 3> proportions{};  // indexed by AuditCategory
  std::size_t n = 0;
};

// Plurality category per task, with any tie at the top going to undecidable.
inline AuditCategory audit_verdict(const std::array<std::size_t, 3>& votes) {
  auto top = *std::max_element(votes.begin(), votes.end());
  if (std::count(votes.begin(), votes.end(), top) > 1) return AuditCategory::Undecidable;
  return static_cast<AuditCategory>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

// Outcomes follow `model_order` (models by original accuracy); models missing
// from it come after, by name. Tasks without answers are skipped with a warning.
inline std::vector<AuditOutcome> aggregate_audit(std::span<const AnnotationTask> tasks,
                                                 std::span<const RaterAnswer> answers,
                                                 std::span<const std::string> model_order = {}) {
  std::map<std::string, std::array<std::size_t, 3>> votes;
  for (const auto& a : answers) {
    if (!a.category) continue;
    ++votes[a.task_id][static_cast<std::size_t>(*a.category)];
  }
  std::map<std::pair<std::string, AccuracyMetric>, std::array<std::size_t, 3>> tallies;
  std::size_t unanswered = 0;
  for (const auto& t : tasks) {
    if (t.kind != TaskKind::MistakeAudit) continue;
    auto it = votes.find(t.task_id);
    if (it == votes.end()) {
      ++unanswered;
      continue;
    }
    ++tallies[{t.audit->model, t.audit->metric}][static_cast<std::size_t>(audit_verdict(it->second))];
  }
  if (unanswered) log::warn("audit_tasks_unanswered", {{"count", unanswered}});

  std::map<std::string, std::size_t> rank;
  for (std::size_t r = 0; r < model_order.size(); ++r) rank.emplace(model_order[r], r);
  std::vector<AuditOutcome> out;
  for (const auto& [key, counts] : tallies) {
    AuditOutcome o;
    o.model = key.first;
    o.metric = key.second;
    o.n = counts[0] + counts[1] + counts[2];
    for (std::size_t c = 0; c < 3; ++c) o.proportions[c] = static_cast<double>(counts[c]) / static_cast<double>(o.n);
    out.push_back(std::move(o));
  }
  std::stable_sort(out.begin(), out.end(), [&](const AuditOutcome& a, const AuditOutcome& b) {
    auto ra = rank.count(a.model) ? rank[a.model] : model_order.size();
    auto rb = rank.count(b.model) ? rank[b.model] : model_order.size();
    if (ra != rb) return ra < rb;
    if (a.model != b.model) return a.model < b.model;
    return a.metric < b.metric;
  });
  return out;
}

inline nlohmann::ordered_json to_json(const AuditOutcome& o) {
  nlohmann::ordered_json j;
  j["model"] = o.model;
  j["metric"] = metric_name(o.metric);
  nlohmann::ordered_json p;
  for (std::size_t c = 0; c < 3; ++c) p[category_name(static_cast<AuditCategory>(c))] = o.proportions[c];
  j["proportions"] = std::move(p);
  j["n"] = o.n;
  return j;
}

}  // namespace realabel
