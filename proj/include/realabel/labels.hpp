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

// Multi-label ground truth: the reassessed label sets (one set per image,
// empty = excluded from evaluation) and the expert gold standard covering a
// subset of images. Both are stored as JSON lines:
//   {"image_id": "...", "labels": [class ids]}

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/text.hpp"

namespace realabel {

inline void normalize_labels(std::vector<ClassId>& labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
}

inline bool contains_label(std::span<const ClassId> sorted, ClassId c) {
  return std::binary_search(sorted.begin(), sorted.end(), c);
}

class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(RegistryPtr images) : images_(std::move(images)) {
    require(images_ != nullptr, "data", "label set without image registry");
    labels_.resize(images_->size());
  }

  const RegistryPtr& images() const noexcept { return images_; }
  std::size_t size() const noexcept { return labels_.size(); }

  void set(std::size_t image, std::vector<ClassId> labels) {
    normalize_labels(labels);
    labels_.at(image) = std::move(labels);
  }
  void add(std::size_t image, ClassId c) {
    auto& v = labels_.at(image);
    auto it = std::lower_bound(v.begin(), v.end(), c);
    if (it == v.end() || *it != c) v.insert(it, c);
  }

  std::span<const ClassId> labels(std::size_t image) const { return labels_.at(image); }
  bool contains(std::size_t image, ClassId c) const { return contains_label(labels(image), c); }
  bool excluded(std::size_t image) const { return labels_.at(image).empty(); }

  std::size_t evaluated_count() const {
    return static_cast<std::size_t>(std::count_if(labels_.begin(), labels_.end(), [](const auto& v) { return !v.empty(); }));
  }
  std::size_t excluded_count() const { return size() - evaluated_count(); }
  std::size_t label_count() const {
    std::size_t n = 0;
    for (const auto& v : labels_) n += v.size();
    return n;
  }

  // Equality by image id, independent of registry order.
  bool operator==(const LabelSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      auto j = other.images_->find(images_->id(i));
      if (!j || labels_[i] != other.labels_[*j]) return false;
    }
    return true;
  }

 private:
  RegistryPtr images_;
  std::vector<std::vector<ClassId>> labels_;
};

// Expert-accepted labels on a strict subset of the dataset.
struct GoldStandard {
  RegistryPtr images;
  std::map<std::size_t, std::vector<ClassId>> sets;
  int expert_count = 0;

  bool empty() const noexcept { return sets.empty(); }
  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& [img, v] : sets) n += v.size();
    return n;
  }
};

namespace detail {

struct LabelLine {
  std::size_t line;
  std::string image;
  std::vector<ClassId> labels;
  std::optional<int> expert_count;
};

inline std::vector<LabelLine> read_label_lines(const std::string& path) {
  auto in = text::open_input(path);
  std::vector<LabelLine> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string() || !j.contains("labels") ||
        !j["labels"].is_array()) {
      throw ParseError(path, line_no, "expected {\"image_id\": string, \"labels\": [ints]}");
    }
    LabelLine entry{line_no, j["image_id"].get<std::string>(), {}, std::nullopt};
    for (const auto& v : j["labels"]) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ParseError(path, line_no, "invalid class id");
      entry.labels.push_back(class_id(v.get<std::int64_t>()));
    }
    if (j.contains("expert_count")) entry.expert_count = j["expert_count"].get<int>();
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace detail

// With a registry, every registry image must appear exactly once and no
// foreign ids are accepted. Without one, the file's order defines the registry.
inline LabelSet ingest_labels(const std::string& path, const RegistryPtr& images = nullptr) {
  auto lines = detail::read_label_lines(path);
  RegistryPtr registry = images;
  if (!registry) {
    std::vector<std::string> ids;
    ids.reserve(lines.size());
    for (const auto& l : lines) ids.push_back(l.image);
    try {
      registry = std::make_shared<const ImageRegistry>(std::move(ids));
    } catch (const Error& e) {
      throw Error("data", path + ": " + e.what());
    }
  }
  LabelSet set(registry);
  std::vector<char> seen(registry->size(), 0);
  for (auto& l : lines) {
    auto idx = registry->find(l.image);
    if (!idx) throw ParseError(path, l.line, "unknown image id " + l.image);
    if (seen[*idx]) throw ParseError(path, l.line, "duplicate image id " + l.image);
    seen[*idx] = 1;
    set.set(*idx, std::move(l.labels));
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error("data", path + ": no entry for image " + registry->id(i));
  }
  return set;
}

// Sorted by image id, labels ascending; byte-deterministic.
inline void export_labels(const LabelSet& labels, const std::string& path) {
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& images = *labels.images();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return images.id(a) < images.id(b); });
  auto out = text::open_output(path);
  for (std::size_t i : order) {
    nlohmann::ordered_json j;
    j["image_id"] = images.id(i);
    auto arr = nlohmann::ordered_json::array();
    for (ClassId c : labels.labels(i)) arr.push_back(to_int(c));
    j["labels"] = std::move(arr);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("io", "write failed: " + path);
}

inline GoldStandard ingest_gold(const std::string& path, const RegistryPtr& images) {
  require(images != nullptr, "data", "gold standard needs the dataset image registry");
  GoldStandard gold;
  gold.images = images;
  for (auto& l : detail::read_label_lines(path)) {
    auto idx = images->find(l.image);
    if (!idx) throw ParseError(path, l.line, "unknown image id " + l.image);
    normalize_labels(l.labels);
    if (!gold.sets.emplace(*idx, std::move(l.labels)).second) throw ParseError(path, l.line, "duplicate image id " + l.image);
    if (l.expert_count) gold.expert_count = std::max(gold.expert_count, *l.expert_count);
  }
  return gold;
}

inline void export_gold(const GoldStandard& gold, const std::string& path) {
  auto out = text::open_output(path);
  std::vector<std::pair<std::string, const std::vector<ClassId>*>> rows;
  for (const auto& [img, v] : gold.sets) rows.emplace_back(gold.images->id(img), &v);
  std::sort(rows.begin(), rows.end());
  for (const auto& [id, v] : rows) {
    nlohmann::ordered_json j;
    j["image_id"] = id;
    auto arr = nlohmann::ordered_json::array();
    for (ClassId c : *v) arr.push_back(to_int(c));
    j["labels"] = std::move(arr);
    if (gold.expert_count > 0) j["expert_count"] = gold.expert_count;
    out << j.dump() << '\n';
  }
}

// The public release format: a JSON array with one label list per validation
// image, in validation-set order. Image ids are generated from `id_pattern`
// (printf-style, 1-based index).
inline LabelSet ingest_released_labels(const std::string& path, const RegistryPtr& images,
                                       const std::string& id_pattern = "ILSVRC2012_val_%08zu") {
  auto in = text::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse", path + ": " + e.what());
  }
  require(j.is_array(), "parse", path + ": expected a JSON array");
  std::vector<std::string> ids;
  ids.reserve(j.size());
  char buf[128];
  for (std::size_t i = 0; i < j.size(); ++i) {
    std::snprintf(buf, sizeof buf, id_pattern.c_str(), i + 1);
    ids.emplace_back(buf);
  }
  RegistryPtr registry = images ? images : std::make_shared<const ImageRegistry>(ids);
  LabelSet set(registry);
  std::vector<char> seen(registry->size(), 0);
  for (std::size_t i = 0; i < j.size(); ++i) {
    std::size_t idx = registry->index_of(ids[i]);
    seen[idx] = 1;
    std::vector<ClassId> labels;
    for (const auto& v : j[i]) labels.push_back(class_id(v.get<std::int64_t>()));
    set.set(idx, std::move(labels));
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw Error("data", path + ": no entry for image " + registry->id(i));
  }
  return set;
}

}  // namespace realabel
