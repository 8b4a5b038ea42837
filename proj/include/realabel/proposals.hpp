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

// Candidate-label proposals pooled from an ensemble of model predictions,
// scored against the expert gold standard, and the exhaustive model-subset
// search that trades precision for a recall floor.
//
// Pooling rule, per model: take the model's `top_logit_count` largest logits
// and `top_prob_count` largest probabilities over all (image, class) pairs of
// the dataset. Each (model, channel) list counts as one occurrence of a pair.
// Pairs with fewer than `min_occurrences` occurrences are dropped. Every
// model's per-image top-1 and the original label are then added
// unconditionally.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/labels.hpp"
#include "realabel/log.hpp"
#include "realabel/parallel.hpp"
#include "realabel/predictions.hpp"

namespace realabel {

struct PoolingConfig {
  std::size_t top_logit_count = 150000;
  std::size_t top_prob_count = 150000;
  // A pooled pair survives iff it appears in at least this many of the
  // 2 * (number of models) channel lists.
  std::size_t min_occurrences = 2;
  // Rank all models' scores together instead of per model.
  bool global_pool = false;

  void validate() const {
    require(top_logit_count > 0 && top_prob_count > 0, "config", "pool counts must be positive");
    require(min_occurrences >= 1, "config", "min_occurrences must be at least 1");
  }
};

enum ProposalSource : std::uint8_t {
  kModelTop1 = 1,
  kOriginalLabel = 2,
  kLogitPool = 4,
  kProbPool = 8,
};

inline std::vector<std::string> source_names(std::uint8_t sources) {
  std::vector<std::string> out;
  if (sources & kModelTop1) out.emplace_back("model-top1");
  if (sources & kOriginalLabel) out.emplace_back("original-label");
  if (sources & kLogitPool) out.emplace_back("logit-pool");
  if (sources & kProbPool) out.emplace_back("probability-pool");
  return out;
}

inline std::uint8_t source_from_name(std::string_view name) {
  if (name == "model-top1") return kModelTop1;
  if (name == "original-label") return kOriginalLabel;
  if (name == "logit-pool") return kLogitPool;
  if (name == "probability-pool") return kProbPool;
  throw Error("parse", "unknown proposal source: " + std::string(name));
}

struct Proposal {
  ClassId cls{};
  std::uint8_t sources = 0;
  std::vector<std::string> models;  // sorted, unique

  bool operator==(const Proposal&) const = default;
};

class ProposalSet {
 public:
  ProposalSet() = default;
  explicit ProposalSet(RegistryPtr images) : images_(std::move(images)) { per_image_.resize(images_->size()); }

  const RegistryPtr& images() const noexcept { return images_; }
  std::size_t image_count() const noexcept { return per_image_.size(); }

  std::span<const Proposal> proposals(std::size_t image) const { return per_image_.at(image); }

  std::vector<ClassId> classes(std::size_t image) const {
    std::vector<ClassId> out;
    for (const auto& p : per_image_.at(image)) out.push_back(p.cls);
    return out;
  }

  bool contains(std::size_t image, ClassId c) const {
    const auto& v = per_image_.at(image);
    auto it = std::lower_bound(v.begin(), v.end(), c, [](const Proposal& p, ClassId x) { return p.cls < x; });
    return it != v.end() && it->cls == c;
  }

  // Merges `sources` and `model` into the proposal for (image, c).
  void add(std::size_t image, ClassId c, std::uint8_t sources, std::string_view model = {}) {
    auto& v = per_image_.at(image);
    auto it = std::lower_bound(v.begin(), v.end(), c, [](const Proposal& p, ClassId x) { return p.cls < x; });
    if (it == v.end() || it->cls != c) it = v.insert(it, Proposal{c, 0, {}});
    it->sources |= sources;
    if (!model.empty()) {
      auto m = std::lower_bound(it->models.begin(), it->models.end(), model);
      if (m == it->models.end() || *m != model) it->models.insert(m, std::string(model));
    }
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& v : per_image_) n += v.size();
    return n;
  }

  double mean_per_image() const {
    return per_image_.empty() ? 0.0 : static_cast<double>(total()) / static_cast<double>(per_image_.size());
  }

  bool operator==(const ProposalSet& other) const {
    return same_images(images_, other.images_) && per_image_ == other.per_image_;
  }

 private:
  RegistryPtr images_;
  std::vector<std::vector<Proposal>> per_image_;
};

namespace detail {

using PairKey = std::uint64_t;

inline PairKey pair_key(std::size_t image, ClassId c) {
  return (static_cast<std::uint64_t>(image) << 32) | static_cast<std::uint32_t>(to_int(c));
}
inline std::size_t key_image(PairKey k) { return static_cast<std::size_t>(k >> 32); }
inline ClassId key_class(PairKey k) { return class_id(static_cast<std::int32_t>(k & 0xffffffffu)); }

struct Candidate {
  double score;
  std::uint32_t model_rank;  // position of the model name in sorted order
  std::uint32_t image;
  std::int32_t cls;
};

// Total order: higher score first, then model name, image index, class id.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.model_rank != b.model_rank) return a.model_rank < b.model_rank;
  if (a.image != b.image) return a.image < b.image;
  return a.cls < b.cls;
}

// Bounded selection of the k best candidates; the heap top is the worst kept.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(const Candidate& c) {
    if (heap_.size() < k_) {
      heap_.push(c);
    } else if (candidate_before(c, heap_.top())) {
      heap_.pop();
      heap_.push(c);
    }
  }

  std::vector<Candidate> take() {
    std::vector<Candidate> out;
    out.reserve(heap_.size());
    while (!heap_.empty()) {
      out.push_back(heap_.top());
      heap_.pop();
    }
    return out;
  }

 private:
  struct Less {
    bool operator()(const Candidate& a, const Candidate& b) const { return candidate_before(a, b); }
  };
  std::size_t k_;
  std::priority_queue<Candidate, std::vector<Candidate>, Less> heap_;
};

// One channel list: the pooled pairs and which model they belong to.
struct Channel {
  std::uint32_t model;  // index into the caller's model list
  bool logit;
  std::vector<PairKey> pairs;
};

inline std::vector<std::uint32_t> model_ranks(std::span<const PredictionSet* const> models) {
  std::vector<std::uint32_t> order(models.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return models[a]->model_name() < models[b]->model_name(); });
  std::vector<std::uint32_t> rank(models.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

inline void offer_model(const PredictionSet& set, std::uint32_t rank, TopK& logits, TopK& probs) {
  for (std::size_t i = 0; i < set.image_count(); ++i) {
    for (const auto& s : set.row(i)) {
      auto img = static_cast<std::uint32_t>(i);
      logits.offer({s.logit, rank, img, to_int(s.cls)});
      probs.offer({s.probability, rank, img, to_int(s.cls)});
    }
  }
}

inline std::vector<Channel> pool_channels(std::span<const PredictionSet* const> models, const PoolingConfig& config) {
  auto ranks = model_ranks(models);
  std::vector<Channel> channels;
  if (!config.global_pool) {
    channels.resize(models.size() * 2);
    parallel_for(models.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t m = begin; m < end; ++m) {
        TopK logits(config.top_logit_count), probs(config.top_prob_count);
        offer_model(*models[m], ranks[m], logits, probs);
        auto& lc = channels[2 * m];
        auto& pc = channels[2 * m + 1];
        lc = {static_cast<std::uint32_t>(m), true, {}};
        pc = {static_cast<std::uint32_t>(m), false, {}};
        for (const auto& c : logits.take()) lc.pairs.push_back(pair_key(c.image, class_id(c.cls)));
        for (const auto& c : probs.take()) pc.pairs.push_back(pair_key(c.image, class_id(c.cls)));
      }
    }, 1);
    return channels;
  }
  TopK logits(config.top_logit_count), probs(config.top_prob_count);
  for (std::size_t m = 0; m < models.size(); ++m) offer_model(*models[m], ranks[m], logits, probs);
  std::vector<std::uint32_t> rank_to_model(models.size());
  for (std::uint32_t m = 0; m < models.size(); ++m) rank_to_model[ranks[m]] = m;
  channels.resize(models.size() * 2);
  for (std::uint32_t m = 0; m < models.size(); ++m) {
    channels[2 * m] = {m, true, {}};
    channels[2 * m + 1] = {m, false, {}};
  }
  for (const auto& c : logits.take()) channels[2 * rank_to_model[c.model_rank]].pairs.push_back(pair_key(c.image, class_id(c.cls)));
  for (const auto& c : probs.take()) channels[2 * rank_to_model[c.model_rank] + 1].pairs.push_back(pair_key(c.image, class_id(c.cls)));
  return channels;
}

inline void check_models(std::span<const PredictionSet* const> models, const OriginalLabels& original) {
  require(!models.empty(), "proposals", "empty model list");
  for (const auto* m : models) {
    require_same_images(m->images(), original.images, "proposals (" + m->model_name() + ")");
  }
}

// Pooling + forced additions given already-computed channel lists.
inline ProposalSet assemble(std::span<const PredictionSet* const> models, std::span<const Channel* const> channels,
                            const OriginalLabels& original, const PoolingConfig& config) {
  struct Pooled {
    std::uint32_t count = 0;
    std::uint8_t sources = 0;
    std::vector<std::uint32_t> models;
  };
  std::unordered_map<PairKey, Pooled> pool;
  for (const auto* ch : channels) {
    for (PairKey k : ch->pairs) {
      auto& p = pool[k];
      ++p.count;
      p.sources |= ch->logit ? kLogitPool : kProbPool;
      if (std::find(p.models.begin(), p.models.end(), ch->model) == p.models.end()) p.models.push_back(ch->model);
    }
  }
  ProposalSet out(original.images);
  std::vector<std::pair<PairKey, const Pooled*>> survivors;
  for (const auto& [k, p] : pool) {
    if (p.count >= config.min_occurrences) survivors.emplace_back(k, &p);
  }
  std::sort(survivors.begin(), survivors.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [k, p] : survivors) {
    for (auto m : p->models) out.add(key_image(k), key_class(k), p->sources, models[m]->model_name());
  }
  for (std::size_t i = 0; i < original.size(); ++i) {
    for (const auto* m : models) out.add(i, m->top1(i), kModelTop1, m->model_name());
    out.add(i, original[i], kOriginalLabel);
  }
  return out;
}

}  // namespace detail

inline ProposalSet generate_proposals(std::span<const PredictionSet* const> models, const OriginalLabels& original,
                                      const PoolingConfig& config = {}) {
  config.validate();
  detail::check_models(models, original);
  auto channels = detail::pool_channels(models, config);
  std::vector<const detail::Channel*> refs;
  for (const auto& c : channels) refs.push_back(&c);
  return detail::assemble(models, refs, original, config);
}

inline ProposalSet generate_proposals(std::span<const PredictionSet> models, const OriginalLabels& original,
                                      const PoolingConfig& config = {}) {
  std::vector<const PredictionSet*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  return generate_proposals(std::span<const PredictionSet* const>(ptrs), original, config);
}

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 0.0;
  std::size_t hits = 0;      // proposed pairs that are gold
  std::size_t proposed = 0;  // proposed pairs on gold images
  std::size_t gold = 0;      // gold pairs

  bool operator==(const PrecisionRecall&) const = default;
};

inline PrecisionRecall make_precision_recall(std::size_t hits, std::size_t proposed, std::size_t gold) {
  PrecisionRecall pr{1.0, 0.0, hits, proposed, gold};
  if (proposed > 0) pr.precision = static_cast<double>(hits) / static_cast<double>(proposed);
  if (gold > 0) pr.recall = static_cast<double>(hits) / static_cast<double>(gold);
  return pr;
}

// Pair-level precision and recall restricted to gold images.
inline PrecisionRecall score_proposals(const ProposalSet& proposals, const GoldStandard& gold) {
  require(!gold.empty(), "proposals", "empty gold standard");
  require_same_images(proposals.images(), gold.images, "score_proposals");
  std::size_t hits = 0, proposed = 0, total_gold = 0;
  for (const auto& [img, labels] : gold.sets) {
    auto props = proposals.proposals(img);
    proposed += props.size();
    total_gold += labels.size();
    for (ClassId c : labels) hits += proposals.contains(img, c);
  }
  return make_precision_recall(hits, proposed, total_gold);
}

struct SubsetSearchResult {
  std::vector<std::string> selected_models;
  double precision = 0.0;
  double recall = 0.0;
  double mean_proposals_per_image = 0.0;
  PrecisionRecall counts;
  std::size_t subsets_evaluated = 0;
  std::size_t monotonicity_violations = 0;
};

inline nlohmann::ordered_json to_json(const SubsetSearchResult& r) {
  nlohmann::ordered_json j;
  j["selected_models"] = r.selected_models;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["mean_proposals_per_image"] = r.mean_proposals_per_image;
  j["hits"] = r.counts.hits;
  j["proposed_on_gold_images"] = r.counts.proposed;
  j["gold_pairs"] = r.counts.gold;
  j["subsets_evaluated"] = r.subsets_evaluated;
  j["monotonicity_violations"] = r.monotonicity_violations;
  return j;
}

inline constexpr std::size_t kMaxSubsetModels = 25;

// Exhaustive search over non-empty model subsets; each subset re-runs the full
// pooling rule. Among subsets with recall >= recall_floor, picks the highest
// precision, then higher recall, fewer models, lexicographically smaller names.
inline SubsetSearchResult select_subset(std::span<const PredictionSet> models, const OriginalLabels& original,
                                        const GoldStandard& gold, double recall_floor = 0.97,
                                        const PoolingConfig& config = {}) {
  config.validate();
  require(!gold.empty(), "proposals", "empty gold standard");
  require(models.size() <= kMaxSubsetModels, "proposals",
          "exhaustive subset search supports at most " + std::to_string(kMaxSubsetModels) + " models");
  std::vector<const PredictionSet*> all;
  for (const auto& m : models) all.push_back(&m);
  detail::check_models(all, original);

  const std::size_t n = models.size();
  const std::uint64_t subsets = (std::uint64_t{1} << n) - 1;

  // Per-model channel lists do not depend on the subset, so compute them once.
  std::vector<detail::Channel> shared_channels;
  if (!config.global_pool) shared_channels = detail::pool_channels(all, config);

  struct Eval {
    PrecisionRecall pr;
    std::size_t total = 0;
  };
  std::vector<Eval> evals(subsets + 1);
  parallel_for(static_cast<std::size_t>(subsets), [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      std::uint64_t mask = s + 1;
      std::vector<const PredictionSet*> chosen;
      std::vector<detail::Channel> own;
      std::vector<const detail::Channel*> refs;
      for (std::size_t m = 0; m < n; ++m) {
        if (mask & (std::uint64_t{1} << m)) chosen.push_back(all[m]);
      }
      if (config.global_pool) {
        own = detail::pool_channels(chosen, config);
        for (const auto& c : own) refs.push_back(&c);
      } else {
        // Re-index channels to positions within `chosen`.
        std::uint32_t pos = 0;
        for (std::size_t m = 0; m < n; ++m) {
          if (!(mask & (std::uint64_t{1} << m))) continue;
          for (int k = 0; k < 2; ++k) {
            own.push_back({pos, k == 0, shared_channels[2 * m + k].pairs});
          }
          ++pos;
        }
        for (const auto& c : own) refs.push_back(&c);
      }
      auto proposals = detail::assemble(chosen, refs, original, config);
      evals[mask] = {score_proposals(proposals, gold), proposals.total()};
    }
  }, 1);

  auto names_of = [&](std::uint64_t mask) {
    std::vector<std::string> names;
    for (std::size_t m = 0; m < n; ++m) {
      if (mask & (std::uint64_t{1} << m)) names.push_back(models[m].model_name());
    }
    std::sort(names.begin(), names.end());
    return names;
  };
  // a better than b? Precision compared exactly via cross-multiplied counts.
  auto better = [&](std::uint64_t a, std::uint64_t b) {
    const auto& pa = evals[a].pr;
    const auto& pb = evals[b].pr;
    auto lhs = static_cast<unsigned __int128>(pa.hits) * std::max<std::size_t>(pb.proposed, 1);
    auto rhs = static_cast<unsigned __int128>(pb.hits) * std::max<std::size_t>(pa.proposed, 1);
    if (lhs != rhs) return lhs > rhs;
    if (pa.hits != pb.hits) return pa.hits > pb.hits;  // same gold total, so higher recall
    int ca = std::popcount(a), cb = std::popcount(b);
    if (ca != cb) return ca < cb;
    return names_of(a) < names_of(b);
  };

  std::optional<std::uint64_t> best;
  double best_recall = 0.0;
  for (std::uint64_t mask = 1; mask <= subsets; ++mask) {
    best_recall = std::max(best_recall, evals[mask].pr.recall);
    if (evals[mask].pr.recall + 1e-12 < recall_floor) continue;
    if (!best || better(mask, *best)) best = mask;
  }

  std::size_t violations = 0;
  for (std::uint64_t mask = 1; mask <= subsets; ++mask) {
    for (std::size_t m = 0; m < n; ++m) {
      std::uint64_t bit = std::uint64_t{1} << m;
      if (mask & bit) continue;
      if (evals[mask | bit].pr.hits < evals[mask].pr.hits) {
        ++violations;
        log::debug("recall_monotonicity_violation",
                   {{"subset", names_of(mask)}, {"added_model", models[m].model_name()},
                    {"recall_before", evals[mask].pr.recall}, {"recall_after", evals[mask | bit].pr.recall}});
      }
    }
  }
  if (violations > 0) log::warn("recall_monotonicity_violations", {{"count", violations}});

  if (!best) {
    throw Error("no-subset", "no model subset reaches recall " + text::format_double(recall_floor) +
                                 "; best achievable recall is " + text::format_double(best_recall));
  }
  SubsetSearchResult result;
  result.selected_models = names_of(*best);
  result.counts = evals[*best].pr;
  result.precision = result.counts.precision;
  result.recall = result.counts.recall;
  result.mean_proposals_per_image =
      original.size() == 0 ? 0.0 : static_cast<double>(evals[*best].total) / static_cast<double>(original.size());
  result.subsets_evaluated = static_cast<std::size_t>(subsets);
  result.monotonicity_violations = violations;
  return result;
}

// JSON lines: {"image_id": ..., "proposals": [{"class_id", "sources", "models"}]}
inline void write_proposals(const ProposalSet& proposals, const std::string& path) {
  auto out = text::open_output(path);
  for (std::size_t i = 0; i < proposals.image_count(); ++i) {
    nlohmann::ordered_json j;
    j["image_id"] = proposals.images()->id(i);
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : proposals.proposals(i)) {
      nlohmann::ordered_json e;
      e["class_id"] = to_int(p.cls);
      e["sources"] = source_names(p.sources);
      e["models"] = p.models;
      arr.push_back(std::move(e));
    }
    j["proposals"] = std::move(arr);
    out << j.dump() << '\n';
  }
  if (!out) throw Error("io", "write failed: " + path);
}

inline ProposalSet read_proposals(const std::string& path, const RegistryPtr& images) {
  require(images != nullptr, "data", "proposals need the dataset image registry");
  auto in = text::open_input(path);
  ProposalSet out(images);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      std::size_t img = images->index_of(j.at("image_id").get<std::string>());
      for (const auto& e : j.at("proposals")) {
        ClassId c = class_id(e.at("class_id").get<std::int64_t>());
        std::uint8_t sources = 0;
        for (const auto& s : e.at("sources")) sources |= source_from_name(s.get<std::string>());
        out.add(img, c, sources);
        for (const auto& m : e.value("models", nlohmann::json::array())) out.add(img, c, 0, m.get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path, line_no, e.what());
    }
  }
  return out;
}

}  // namespace realabel
