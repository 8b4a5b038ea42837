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

// Shared builders for synthetic datasets used across the test suites.

#include <cstdint>
#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "realabel/realabel.hpp"

namespace fixtures {

using namespace realabel;

inline RegistryPtr make_registry(std::size_t n, const std::string& prefix = "img") {
  std::vector<std::string> ids;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), i);
    ids.emplace_back(buf);
  }
  return std::make_shared<const ImageRegistry>(std::move(ids));
}

inline OriginalLabels make_original(RegistryPtr images, const std::vector<int>& labels) {
  OriginalLabels o;
  o.images = std::move(images);
  for (int c : labels) o.labels.push_back(class_id(c));
  return o;
}

// Dense predictions with logits from `logit(i, c)`.
template <typename F>
PredictionSet make_dense(const std::string& name, RegistryPtr images, int classes, F logit) {
  PredictionSet p(name, images, classes);
  for (std::size_t i = 0; i < images->size(); ++i) {
    std::vector<Score> row;
    for (int c = 0; c < classes; ++c) row.push_back({class_id(c), logit(i, c), 0.0});
    p.set_row(i, std::move(row));
  }
  p.derive_probabilities();
  return p;
}

inline PredictionSet random_dense(const std::string& name, RegistryPtr images, int classes, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 2.0);
  return make_dense(name, images, classes, [&](std::size_t, int) { return z(rng); });
}

// Predictions whose top-1 is `top[i]`.
inline PredictionSet with_top1(const std::string& name, RegistryPtr images, int classes, const std::vector<int>& top) {
  return make_dense(name, images, classes, [&](std::size_t i, int c) { return c == top[i] ? 5.0 : -static_cast<double>(c) * 0.01; });
}

inline ClassManifest make_manifest(int classes, std::vector<int> animals = {}, std::vector<int> finegrained = {}) {
  ClassManifest m;
  for (int c = 0; c < classes; ++c) {
    bool fg = std::find(finegrained.begin(), finegrained.end(), c) != finegrained.end();
    bool an = fg || std::find(animals.begin(), animals.end(), c) != animals.end();
    m.add({class_id(c), "n" + std::to_string(10000 + c), "class" + std::to_string(c), an, fg});
  }
  return m;
}

// A rater campaign over `images` x `options` items, exactly
// round(present_fraction * items) of them present, one task per image.
struct PlantedCampaign {
  RegistryPtr images;
  std::vector<AnnotationTask> tasks;
  LabelSet truth;
  std::size_t present = 0;
};

inline PlantedCampaign planted_campaign(std::size_t images, std::size_t options, double present_fraction,
                                        std::uint64_t seed) {
  auto registry = make_registry(images);
  PlantedCampaign c{registry, {}, LabelSet(registry), 0};
  const std::size_t items = images * options;
  std::vector<char> present(items, 0);
  c.present = static_cast<std::size_t>(std::llround(present_fraction * static_cast<double>(items)));
  std::fill(present.begin(), present.begin() + static_cast<std::ptrdiff_t>(c.present), 1);
  std::mt19937_64 rng(seed);
  std::shuffle(present.begin(), present.end(), rng);
  for (std::size_t i = 0; i < images; ++i) {
    AnnotationTask t;
    t.image_id = registry->id(i);
    for (std::size_t o = 0; o < options; ++o) {
      t.options.push_back(class_id(static_cast<int>(o)));
      if (present[i * options + o]) c.truth.add(i, class_id(static_cast<int>(o)));
    }
    t.task_id = label_task_id(t.image_id, t.options);
    c.tasks.push_back(std::move(t));
  }
  return c;
}

inline SimulatedRaterProfile profile(std::string id, std::array<double, 3> present, std::array<double, 3> absent,
                                     std::uint64_t seed) {
  SimulatedRaterProfile p;
  p.rater_id = std::move(id);
  p.present = present;
  p.absent = absent;
  p.seed = seed;
  return p;
}

// Norm-wise relative error between an analytic gradient and central finite
// differences of `loss` at `z`.
template <typename F>
double fd_relative_error(std::vector<double> z, const std::vector<double>& analytic, F loss, double h = 1e-5) {
  double diff = 0, a = 0, b = 0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    double keep = z[c];
    z[c] = keep + h;
    double up = loss(z);
    z[c] = keep - h;
    double down = loss(z);
    z[c] = keep;
    double fd = (up - down) / (2 * h);
    diff += (fd - analytic[c]) * (fd - analytic[c]);
    a += analytic[c] * analytic[c];
    b += fd * fd;
  }
  double scale = std::max(std::sqrt(a), std::sqrt(b));
  return scale == 0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("realabel_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
