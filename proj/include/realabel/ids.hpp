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

// Identifier spaces. Images are referenced by an opaque string token and a
// dense index assigned when the dataset is first ingested; classes by an
// integer id in [0, C).

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "realabel/error.hpp"
#include "realabel/text.hpp"

namespace realabel {

enum class ClassId : std::int32_t {};

constexpr std::int32_t to_int(ClassId c) noexcept { return static_cast<std::int32_t>(c); }
constexpr ClassId class_id(std::int64_t v) noexcept { return static_cast<ClassId>(v); }

class ImageRegistry {
 public:
  ImageRegistry() = default;

  explicit ImageRegistry(std::vector<std::string> ids) : ids_(std::move(ids)) {
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      require(!ids_[i].empty(), "data", "empty image id");
      auto [it, inserted] = index_.emplace(ids_[i], i);
      require(inserted, "data", "duplicate image id: " + ids_[i]);
    }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::string& id(std::size_t index) const { return ids_.at(index); }
  std::span<const std::string> ids() const noexcept { return ids_; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view id) const {
    auto found = find(id);
    if (!found) throw Error("unknown-id", "unknown image id: " + std::string(id));
    return *found;
  }

  bool operator==(const ImageRegistry& other) const { return ids_ == other.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

using RegistryPtr = std::shared_ptr<const ImageRegistry>;

inline bool same_images(const RegistryPtr& a, const RegistryPtr& b) {
  return a == b || (a && b && *a == *b);
}

inline void require_same_images(const RegistryPtr& a, const RegistryPtr& b, std::string_view what) {
  if (!same_images(a, b)) {
    throw Error("mismatch", std::string(what) + ": inputs do not cover the same image set");
  }
}

// The dataset's original single label per image. Its file defines the image
// registry that every other input is validated against.
struct OriginalLabels {
  RegistryPtr images;
  std::vector<ClassId> labels;

  std::size_t size() const noexcept { return labels.size(); }
  ClassId operator[](std::size_t i) const { return labels[i]; }
};

// CSV with header `image_id,class_id`.
inline OriginalLabels load_original_labels(const std::string& path) {
  auto in = text::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> ids;
  std::vector<ClassId> labels;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto fields = text::split_csv(trimmed);
    if (!fields || fields->size() != 2) throw ParseError(path, line_no, "expected 2 fields");
    if (!header_seen) {
      header_seen = true;
      if ((*fields)[0] == "image_id") continue;
    }
    auto cls = text::parse_int((*fields)[1]);
    if (!cls || *cls < 0) throw ParseError(path, line_no, "invalid class id");
    ids.emplace_back(text::trim((*fields)[0]));
    labels.push_back(class_id(*cls));
  }
  OriginalLabels out;
  try {
    out.images = std::make_shared<const ImageRegistry>(std::move(ids));
  } catch (const Error& e) {
    throw Error("data", path + ": " + e.what());
  }
  out.labels = std::move(labels);
  return out;
}

inline void write_original_labels(const OriginalLabels& labels, const std::string& path) {
  auto out = text::open_output(path);
  out << "image_id,class_id\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << text::csv_escape(labels.images->id(i)) << ',' << to_int(labels[i]) << '\n';
  }
  if (!out) throw Error("io", "write failed: " + path);
}

}  // namespace realabel
