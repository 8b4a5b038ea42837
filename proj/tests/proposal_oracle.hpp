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

// Independent enumeration of the proposal pooling rule, shared by the unit
// tests and the acceptance run.

#include <map>
#include <set>
#include <tuple>

#include "fixtures.hpp"

namespace fixtures {

using PairSet = std::set<std::pair<std::size_t, int>>;

// Straight enumeration of the pooling rule: rank each model's (image, class)
// pairs by score (ties: image, then class), keep the top k of each channel,
// count how many of the 2M lists each pair is in.
inline PairSet brute_force(const std::vector<PredictionSet>& models, const OriginalLabels& original, std::size_t k_logit,
                    std::size_t k_prob, std::size_t min_occurrences) {
  std::map<std::pair<std::size_t, int>, std::size_t> count;
  for (const auto& m : models) {
    for (int channel = 0; channel < 2; ++channel) {
      std::vector<std::tuple<double, std::size_t, int>> all;
      for (std::size_t i = 0; i < m.image_count(); ++i) {
        for (const auto& s : m.row(i)) all.emplace_back(channel == 0 ? s.logit : s.probability, i, to_int(s.cls));
      }
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
      });
      std::size_t k = channel == 0 ? k_logit : k_prob;
      for (std::size_t j = 0; j < std::min(k, all.size()); ++j) ++count[{std::get<1>(all[j]), std::get<2>(all[j])}];
    }
  }
  PairSet out;
  for (const auto& [pair, n] : count) {
    if (n >= min_occurrences) out.insert(pair);
  }
  for (std::size_t i = 0; i < original.size(); ++i) {
    out.insert({i, to_int(original[i])});
    for (const auto& m : models) {
      // argmax by hand, lower class on ties
      int best = -1;
      double best_logit = 0;
      for (const auto& s : m.row(i)) {
        if (best < 0 || s.logit > best_logit) {
          best = to_int(s.cls);
          best_logit = s.logit;
        }
      }
      out.insert({i, best});
    }
  }
  return out;
}

inline PairSet pairs_of(const ProposalSet& p) {
  PairSet out;
  for (std::size_t i = 0; i < p.image_count(); ++i) {
    for (ClassId c : p.classes(i)) out.insert({i, to_int(c)});
  }
  return out;
}

struct RandomFixture {
  std::vector<PredictionSet> models;
  OriginalLabels original;
};

inline RandomFixture random_fixture(std::uint64_t seed, std::size_t n_models = 3, std::size_t n_images = 20, int classes = 10) {
  std::mt19937_64 rng(seed);
  auto images = fixtures::make_registry(n_images);
  RandomFixture f;
  // Every third seed quantizes logits so that ties exercise the order.
  bool coarse = seed % 3 == 0;
  std::normal_distribution<double> z(0.0, 2.0);
  for (std::size_t m = 0; m < n_models; ++m) {
    f.models.push_back(fixtures::make_dense("model" + std::to_string(m), images, classes, [&](std::size_t, int) {
      double v = z(rng);
      return coarse ? std::round(v) : v;
    }));
  }
  std::vector<int> labels;
  for (std::size_t i = 0; i < n_images; ++i) labels.push_back(static_cast<int>(rng() % classes));
  f.original = fixtures::make_original(images, labels);
  return f;
}

}  // namespace fixtures
