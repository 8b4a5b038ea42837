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

// Turns proposals into rater work: images where every model agrees with the
// original label need no review; the rest are split into label-assessment
// tasks of at most `max_options` candidates, grouping semantically close
// classes by hierarchy distance.

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "realabel/error.hpp"
#include "realabel/hierarchy.hpp"
#include "realabel/ids.hpp"
#include "realabel/parallel.hpp"
#include "realabel/predictions.hpp"
#include "realabel/proposals.hpp"
#include "realabel/text.hpp"

namespace realabel {

enum class TaskKind { LabelAssessment, MistakeAudit };

inline const char* task_kind_name(TaskKind k) {
  return k == TaskKind::LabelAssessment ? "label-assessment" : "mistake-audit";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "label-assessment") return TaskKind::LabelAssessment;
  if (s == "mistake-audit") return TaskKind::MistakeAudit;
  throw Error("parse", "unknown task kind: " + std::string(s));
}

enum class AccuracyMetric { Original, Real };

inline const char* metric_name(AccuracyMetric m) { return m == AccuracyMetric::Original ? "original" : "real"; }

inline AccuracyMetric parse_metric(std::string_view s) {
  if (s == "original") return AccuracyMetric::Original;
  if (s == "real") return AccuracyMetric::Real;
  throw Error("parse", "unknown metric: " + std::string(s));
}

struct AuditPayload {
  std::string model;
  AccuracyMetric metric = AccuracyMetric::Original;
  ClassId predicted{};
  std::vector<ClassId> correct;
  // Per correct label, exemplar image ids that carry it.
  std::vector<std::pair<ClassId, std::vector<std::string>>> exemplars;

  bool operator==(const AuditPayload&) const = default;
};

struct AnnotationTask {
  std::string task_id;
  TaskKind kind = TaskKind::LabelAssessment;
  std::string image_id;
  std::vector<ClassId> options;
  int required_raters = 5;
  std::optional<AuditPayload> audit;

  // Number of verdicts an answer must carry.
  std::size_t verdict_arity() const { return kind == TaskKind::LabelAssessment ? options.size() : 1; }

  bool operator==(const AnnotationTask&) const = default;
};

inline constexpr std::size_t kDefaultMaxOptions = 8;

inline std::string label_task_id(std::string_view image_id, std::span<const ClassId> sorted_options) {
  std::string key(image_id);
  key.push_back('|');
  for (ClassId c : sorted_options) {
    key += std::to_string(to_int(c));
    key.push_back(',');
  }
  return "t" + text::hex64(text::fnv1a64(key));
}

inline nlohmann::ordered_json to_json(const AnnotationTask& t) {
  nlohmann::ordered_json j;
  j["task_id"] = t.task_id;
  j["kind"] = task_kind_name(t.kind);
  j["image_id"] = t.image_id;
  auto opts = nlohmann::ordered_json::array();
  for (ClassId c : t.options) opts.push_back(to_int(c));
  j["options"] = std::move(opts);
  j["required_raters"] = t.required_raters;
  if (t.audit) {
    nlohmann::ordered_json a;
    a["model"] = t.audit->model;
    a["metric"] = metric_name(t.audit->metric);
    a["predicted"] = to_int(t.audit->predicted);
    auto correct = nlohmann::ordered_json::array();
    for (ClassId c : t.audit->correct) correct.push_back(to_int(c));
    a["correct"] = std::move(correct);
    auto ex = nlohmann::ordered_json::array();
    for (const auto& [c, ids] : t.audit->exemplars) {
      nlohmann::ordered_json e;
      e["class_id"] = to_int(c);
      e["image_ids"] = ids;
      ex.push_back(std::move(e));
    }
    a["exemplars"] = std::move(ex);
    j["audit"] = std::move(a);
  }
  return j;
}

inline AnnotationTask task_from_json(const nlohmann::json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.kind = parse_task_kind(j.at("kind").get<std::string>());
  t.image_id = j.at("image_id").get<std::string>();
  for (const auto& c : j.value("options", nlohmann::json::array())) t.options.push_back(class_id(c.get<std::int64_t>()));
  t.required_raters = j.value("required_raters", 5);
  if (j.contains("audit")) {
    const auto& a = j.at("audit");
    AuditPayload p;
    p.model = a.at("model").get<std::string>();
    p.metric = parse_metric(a.at("metric").get<std::string>());
    p.predicted = class_id(a.at("predicted").get<std::int64_t>());
    for (const auto& c : a.at("correct")) p.correct.push_back(class_id(c.get<std::int64_t>()));
    for (const auto& e : a.value("exemplars", nlohmann::json::array())) {
      p.exemplars.emplace_back(class_id(e.at("class_id").get<std::int64_t>()),
                               e.at("image_ids").get<std::vector<std::string>>());
    }
    t.audit = std::move(p);
  }
  require(!t.task_id.empty(), "data", "task without id");
  require(t.required_raters >= 1, "data", "task " + t.task_id + ": required_raters must be positive");
  if (t.kind == TaskKind::LabelAssessment) {
    require(!t.options.empty() && t.options.size() <= 64, "data", "task " + t.task_id + ": invalid option count");
    auto sorted = t.options;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "data",
            "task " + t.task_id + ": duplicate options");
  } else {
    require(t.audit.has_value(), "data", "audit task " + t.task_id + " without payload");
  }
  return t;
}

inline void write_tasks(std::span<const AnnotationTask> tasks, const std::string& path) {
  auto out = text::open_output(path);
  for (const auto& t : tasks) out << to_json(t).dump() << '\n';
  if (!out) throw Error("io", "write failed: " + path);
}

inline std::vector<AnnotationTask> read_tasks(const std::string& path) {
  auto in = text::open_input(path);
  std::vector<AnnotationTask> tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      tasks.push_back(task_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path, line_no, e.what());
    }
  }
  return tasks;
}

struct UnanimityFilter {
  std::vector<std::size_t> keep;  // images needing review, ascending
  std::vector<std::size_t> skip;  // every model's top-1 equals the original label
};

inline UnanimityFilter filter_unanimous(const ProposalSet& proposals, std::span<const PredictionSet> models,
                                        const OriginalLabels& original) {
  require(!models.empty(), "tasking", "empty model list");
  require_same_images(proposals.images(), original.images, "filter_unanimous");
  for (const auto& m : models) require_same_images(m.images(), original.images, "filter_unanimous (" + m.model_name() + ")");
  UnanimityFilter out;
  for (std::size_t i = 0; i < original.size(); ++i) {
    bool unanimous = std::all_of(models.begin(), models.end(), [&](const PredictionSet& m) { return m.top1(i) == original[i]; });
    (unanimous ? out.skip : out.keep).push_back(i);
  }
  return out;
}

// Agglomerative grouping of one image's options under complete-linkage
// hierarchy distance. Closest clusters merge first while the merged size stays
// within max_options; ties go to the pair with the smaller leading class ids.
// Groups come back sorted internally and ordered by their smallest class.
inline std::vector<std::vector<ClassId>> group_options(std::vector<ClassId> options, const ClassHierarchy& hierarchy,
                                                       std::size_t max_options = kDefaultMaxOptions) {
  require(max_options >= 2, "tasking", "max_options must be at least 2");
  require(!options.empty(), "tasking", "image with zero proposals");
  std::sort(options.begin(), options.end());
  options.erase(std::unique(options.begin(), options.end()), options.end());
  if (options.size() <= max_options) return {options};

  const std::size_t n = options.size();
  std::vector<std::vector<std::size_t>> dist(n, std::vector<std::size_t>(n, 0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      dist[a][b] = dist[b][a] = hierarchy.class_distance(options[a], options[b]);
    }
  }
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  auto linkage = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    std::size_t worst = 0;
    for (auto a : x)
      for (auto b : y) worst = std::max(worst, dist[a][b]);
    return worst;
  };
  while (true) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    std::size_t best_d = std::numeric_limits<std::size_t>::max();
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        if (clusters[a].size() + clusters[b].size() > max_options) continue;
        std::size_t d = linkage(clusters[a], clusters[b]);
        // Clusters are kept ordered by smallest member, so the first strict
        // minimum is also the lexicographic tie-break winner.
        if (d < best_d) {
          best_d = d;
          best = std::make_pair(a, b);
        }
      }
    }
    if (!best) break;
    auto& into = clusters[best->first];
    into.insert(into.end(), clusters[best->second].begin(), clusters[best->second].end());
    std::sort(into.begin(), into.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best->second));
  }
  std::vector<std::vector<ClassId>> groups;
  for (const auto& c : clusters) {
    std::vector<ClassId> g;
    for (auto idx : c) g.push_back(options[idx]);
    groups.push_back(std::move(g));
  }
  return groups;
}

// One or more label-assessment tasks per kept image, in image order.
inline std::vector<AnnotationTask> split_tasks(const ProposalSet& proposals, std::span<const std::size_t> keep,
                                               const ClassHierarchy& hierarchy,
                                               std::size_t max_options = kDefaultMaxOptions, int required_raters = 5) {
  require(max_options >= 2, "tasking", "max_options must be at least 2");
  std::vector<std::vector<AnnotationTask>> per_image(keep.size());
  parallel_for(keep.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      std::size_t img = keep[k];
      const std::string& image_id = proposals.images()->id(img);
      auto classes = proposals.classes(img);
      if (classes.empty()) throw Error("tasking", "image " + image_id + " has zero proposals");
      for (auto& group : group_options(std::move(classes), hierarchy, max_options)) {
        AnnotationTask t;
        t.task_id = label_task_id(image_id, group);
        t.kind = TaskKind::LabelAssessment;
        t.image_id = image_id;
        t.options = std::move(group);
        t.required_raters = required_raters;
        per_image[k].push_back(std::move(t));
      }
    }
  }, 16);
  std::vector<AnnotationTask> tasks;
  for (auto& v : per_image) {
    for (auto& t : v) tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace realabel
