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

// Dataset-level class metadata (`class_id,wnid,display_name,is_animal,
// is_finegrained_animal`).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/text.hpp"

namespace realabel {

struct ClassInfo {
  ClassId id{};
  std::string wnid;
  std::string display_name;
  bool is_animal = false;
  bool is_finegrained_animal = false;

  bool operator==(const ClassInfo&) const = default;
};

class ClassManifest {
 public:
  ClassManifest() = default;

  explicit ClassManifest(std::vector<ClassInfo> classes) {
    for (auto& info : classes) add(std::move(info));
  }

  void add(ClassInfo info) {
    require(to_int(info.id) >= 0, "data", "negative class id");
    auto [it, inserted] = classes_.emplace(info.id, std::move(info));
    require(inserted, "data", "duplicate class id " + std::to_string(to_int(it->first)));
  }

  bool contains(ClassId c) const { return classes_.count(c) != 0; }
  std::size_t size() const noexcept { return classes_.size(); }

  const ClassInfo& at(ClassId c) const {
    auto it = classes_.find(c);
    if (it == classes_.end()) throw Error("unknown-id", "unknown class id: " + std::to_string(to_int(c)));
    return it->second;
  }

  bool is_animal(ClassId c) const { return at(c).is_animal; }
  bool is_finegrained_animal(ClassId c) const { return at(c).is_finegrained_animal; }

  std::optional<ClassId> find_by_name(std::string_view name) const {
    for (const auto& [id, info] : classes_) {
      if (info.display_name == name || info.wnid == name) return id;
    }
    return std::nullopt;
  }

  const std::map<ClassId, ClassInfo>& classes() const noexcept { return classes_; }

 private:
  std::map<ClassId, ClassInfo> classes_;
};

inline ClassManifest load_class_manifest(const std::string& path) {
  auto in = text::open_input(path);
  ClassManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto fields = text::split_csv(trimmed);
    if (!fields || fields->size() != 5) throw ParseError(path, line_no, "expected 5 fields");
    auto& f = *fields;
    if (!header_seen) {
      header_seen = true;
      if (f[0] == "class_id") continue;
    }
    auto id = text::parse_int(f[0]);
    auto animal = text::parse_bool(f[3]);
    auto finegrained = text::parse_bool(f[4]);
    if (!id || *id < 0) throw ParseError(path, line_no, "invalid class id");
    if (!animal || !finegrained) throw ParseError(path, line_no, "invalid boolean flag");
    ClassInfo info{class_id(*id), std::string(text::trim(f[1])), f[2], *animal, *finegrained};
    try {
      manifest.add(std::move(info));
    } catch (const Error& e) {
      throw ParseError(path, line_no, e.what());
    }
  }
  return manifest;
}

inline void write_class_manifest(const ClassManifest& manifest, const std::string& path) {
  auto out = text::open_output(path);
  out << "class_id,wnid,display_name,is_animal,is_finegrained_animal\n";
  for (const auto& [id, info] : manifest.classes()) {
    out << to_int(id) << ',' << text::csv_escape(info.wnid) << ',' << text::csv_escape(info.display_name) << ','
        << (info.is_animal ? 1 : 0) << ',' << (info.is_finegrained_animal ? 1 : 0) << '\n';
  }
}

}  // namespace realabel
