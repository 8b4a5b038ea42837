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

// Is-a hierarchy over wnid tokens, loaded from a `child_wnid,parent_wnid`
// edge list. Multiple parents are allowed; cycles are not.

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/manifest.hpp"
#include "realabel/text.hpp"

namespace realabel {

class ClassHierarchy {
 public:
  static constexpr std::size_t kUnrelated = std::numeric_limits<std::size_t>::max() / 4;

  ClassHierarchy() = default;

  // Edges are (child, parent). Throws on a cycle.
  ClassHierarchy(const std::vector<std::string>& nodes, const std::vector<std::pair<std::string, std::string>>& edges) {
    std::vector<std::string> all = nodes;
    for (const auto& [child, parent] : edges) {
      all.push_back(child);
      all.push_back(parent);
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    wnids_ = std::move(all);
    for (std::size_t i = 0; i < wnids_.size(); ++i) index_.emplace(wnids_[i], i);
    parents_.assign(wnids_.size(), {});
    children_.assign(wnids_.size(), {});
    for (const auto& [child, parent] : edges) {
      std::size_t c = index_.at(child), p = index_.at(parent);
      require(c != p, "hierarchy", "self loop at " + child);
      parents_[c].push_back(p);
      children_[p].push_back(c);
    }
    for (auto& v : parents_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (auto& v : children_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    check_acyclic();
  }

  std::size_t node_count() const noexcept { return wnids_.size(); }
  bool contains(std::string_view wnid) const { return index_.count(std::string(wnid)) != 0; }
  const std::string& wnid(std::size_t node) const { return wnids_.at(node); }

  std::size_t node(std::string_view wnid) const {
    auto it = index_.find(std::string(wnid));
    if (it == index_.end()) throw Error("hierarchy", "unknown hierarchy node: " + std::string(wnid));
    return it->second;
  }

  // The node and all its descendants, sorted by wnid.
  std::vector<std::string> subtree(std::string_view root) const {
    std::vector<char> seen(wnids_.size(), 0);
    std::vector<std::size_t> stack{node(root)};
    seen[stack.back()] = 1;
    while (!stack.empty()) {
      std::size_t n = stack.back();
      stack.pop_back();
      for (std::size_t c : children_[n]) {
        if (!seen[c]) {
          seen[c] = 1;
          stack.push_back(c);
        }
      }
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < wnids_.size(); ++i) {
      if (seen[i]) out.push_back(wnids_[i]);
    }
    return out;
  }

  // Shortest upward distance from `start` to each of its ancestors (itself at 0).
  std::map<std::size_t, std::size_t> ancestors(std::size_t start) const {
    std::map<std::size_t, std::size_t> dist{{start, 0}};
    std::deque<std::size_t> queue{start};
    while (!queue.empty()) {
      std::size_t n = queue.front();
      queue.pop_front();
      for (std::size_t p : parents_[n]) {
        if (dist.emplace(p, dist[n] + 1).second) queue.push_back(p);
      }
    }
    return dist;
  }

  // Common ancestor minimising the path length a -> ancestor -> b; ties go to
  // the lexicographically smaller wnid. nullopt when a and b share no ancestor.
  std::optional<std::string> lca(std::string_view a, std::string_view b) const {
    auto best = closest_common(ancestors(node(a)), ancestors(node(b)));
    if (!best) return std::nullopt;
    return wnids_[best->first];
  }

  std::size_t distance(std::string_view a, std::string_view b) const {
    auto best = closest_common(ancestors(node(a)), ancestors(node(b)));
    return best ? best->second : kUnrelated;
  }

  // Binds class ids to nodes. Every class with a non-empty wnid must resolve.
  void attach(const ClassManifest& manifest) {
    class_nodes_.clear();
    for (const auto& [id, info] : manifest.classes()) {
      if (info.wnid.empty()) continue;
      auto it = index_.find(info.wnid);
      if (it == index_.end()) {
        throw Error("hierarchy", "class " + std::to_string(to_int(id)) + " maps to missing node " + info.wnid);
      }
      class_nodes_.emplace(id, it->second);
    }
  }

  std::optional<std::size_t> class_node(ClassId c) const {
    auto it = class_nodes_.find(c);
    if (it == class_nodes_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t class_distance(ClassId a, ClassId b) const {
    if (a == b) return 0;
    auto na = class_node(a), nb = class_node(b);
    if (!na || !nb) return kUnrelated;
    auto best = closest_common(ancestors(*na), ancestors(*nb));
    return best ? best->second : kUnrelated;
  }

  std::optional<std::size_t> declared_node_count() const noexcept { return declared_nodes_; }
  void set_declared_node_count(std::size_t n) { declared_nodes_ = n; }

 private:
  static std::optional<std::pair<std::size_t, std::size_t>> closest_common(
      const std::map<std::size_t, std::size_t>& da, const std::map<std::size_t, std::size_t>& db) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    for (const auto& [n, d] : da) {
      auto it = db.find(n);
      if (it == db.end()) continue;
      std::size_t total = d + it->second;
      // Node indices follow wnid order, so the first minimum found is the
      // lexicographically smallest.
      if (!best || total < best->second) best = std::make_pair(n, total);
    }
    return best;
  }

  void check_acyclic() const {
    std::vector<std::size_t> pending(wnids_.size(), 0);
    for (std::size_t n = 0; n < wnids_.size(); ++n) pending[n] = children_[n].size();
    std::vector<std::size_t> ready;
    for (std::size_t n = 0; n < wnids_.size(); ++n) {
      if (pending[n] == 0) ready.push_back(n);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
      std::size_t n = ready.back();
      ready.pop_back();
      ++visited;
      for (std::size_t p : parents_[n]) {
        if (--pending[p] == 0) ready.push_back(p);
      }
    }
    if (visited != wnids_.size()) {
      for (std::size_t n = 0; n < wnids_.size(); ++n) {
        if (pending[n] != 0) throw Error("hierarchy", "cycle detected involving node " + wnids_[n]);
      }
    }
  }

  std::vector<std::string> wnids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::map<ClassId, std::size_t> class_nodes_;
  std::optional<std::size_t> declared_nodes_;
};

// Edge list `child_wnid,parent_wnid`, one per line. A line with a single
// token declares an isolated node. An optional `# nodes=N` comment declares
// the expected node count, which is verified.
inline ClassHierarchy load_hierarchy(const std::string& path, const ClassManifest* manifest = nullptr) {
  auto in = text::open_input(path);
  std::vector<std::string> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::optional<std::size_t> declared;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    if (trimmed.front() == '#') {
      auto pos = trimmed.find("nodes=");
      if (pos != std::string_view::npos) {
        auto n = text::parse_int<std::size_t>(trimmed.substr(pos + 6));
        if (!n) throw ParseError(path, line_no, "invalid node count");
        declared = *n;
      }
      continue;
    }
    auto fields = text::split_csv(trimmed);
    if (!fields || fields->empty() || fields->size() > 2) throw ParseError(path, line_no, "expected child_wnid,parent_wnid");
    std::string child(text::trim((*fields)[0]));
    std::string parent = fields->size() == 2 ? std::string(text::trim((*fields)[1])) : std::string();
    if (child == "child_wnid") continue;
    if (child.empty()) throw ParseError(path, line_no, "empty child wnid");
    if (parent.empty()) nodes.push_back(std::move(child));
    else edges.emplace_back(std::move(child), std::move(parent));
  }
  ClassHierarchy h(nodes, edges);
  if (declared) {
    if (*declared != h.node_count()) {
      throw Error("hierarchy", path + ": declared " + std::to_string(*declared) + " nodes, found " +
                                   std::to_string(h.node_count()));
    }
    h.set_declared_node_count(*declared);
  }
  if (manifest) h.attach(*manifest);
  return h;
}

}  // namespace realabel
