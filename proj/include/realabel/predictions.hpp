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

// One model's scores over (image, class) pairs, stored sparse or dense, and
// the two on-disk formats: sparse CSV (canonical) and a dense binary format
// for full-scale runs. The format is chosen by file extension.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "realabel/error.hpp"
#include "realabel/ids.hpp"
#include "realabel/text.hpp"

namespace realabel {

struct Score {
  ClassId cls{};
  double logit = 0.0;
  double probability = 0.0;

  bool operator==(const Score&) const = default;
};

inline constexpr double kDenseProbabilityTolerance = 1e-4;

// Stable softmax over the logits of one row, written into `probability`.
inline void softmax_row(std::span<Score> row) {
  if (row.empty()) return;
  double max_logit = row.front().logit;
  for (const auto& s : row) max_logit = std::max(max_logit, s.logit);
  double total = 0.0;
  for (auto& s : row) {
    s.probability = std::exp(s.logit - max_logit);
    total += s.probability;
  }
  for (auto& s : row) s.probability /= total;
}

// Ranking order within an image: higher logit first, ties to the lower class id.
inline bool ranks_before(const Score& a, const Score& b) {
  if (a.logit != b.logit) return a.logit > b.logit;
  return to_int(a.cls) < to_int(b.cls);
}

class PredictionSet {
 public:
  PredictionSet() = default;

  PredictionSet(std::string model_name, RegistryPtr images, std::int32_t num_classes)
      : model_name_(std::move(model_name)), images_(std::move(images)), num_classes_(num_classes) {
    require(images_ != nullptr, "data", "prediction set without image registry");
    require(num_classes_ > 0, "data", "prediction set needs a positive class count");
    rows_.resize(images_->size());
  }

  const std::string& model_name() const noexcept { return model_name_; }
  void set_model_name(std::string name) { model_name_ = std::move(name); }
  const RegistryPtr& images() const noexcept { return images_; }
  std::int32_t num_classes() const noexcept { return num_classes_; }
  std::size_t image_count() const noexcept { return rows_.size(); }

  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }
  std::optional<std::string> meta(const std::string& key) const {
    auto it = metadata_.find(key);
    if (it == metadata_.end()) return std::nullopt;
    return it->second;
  }

  bool probabilities_derived() const noexcept { return probabilities_derived_; }

  // Replaces the row for `image`; entries are sorted by class id and must be
  // unique and in range.
  void set_row(std::size_t image, std::vector<Score> row) {
    require(image < rows_.size(), "data", "image index out of range");
    std::sort(row.begin(), row.end(), [](const Score& a, const Score& b) { return to_int(a.cls) < to_int(b.cls); });
    for (std::size_t i = 0; i < row.size(); ++i) {
      require(to_int(row[i].cls) >= 0 && to_int(row[i].cls) < num_classes_, "data",
              "class id " + std::to_string(to_int(row[i].cls)) + " out of range");
      require(i == 0 || row[i].cls != row[i - 1].cls, "data", "duplicate class in prediction row");
    }
    rows_[image] = std::move(row);
  }

  // Recomputes every probability from logits by per-image softmax.
  void derive_probabilities() {
    for (auto& row : rows_) softmax_row(row);
    probabilities_derived_ = true;
  }

  void mark_probabilities_provided() noexcept { probabilities_derived_ = false; }

  std::span<const Score> row(std::size_t image) const { return rows_.at(image); }
  bool has(std::size_t image) const { return !rows_.at(image).empty(); }

  bool row_is_dense(std::size_t image) const {
    return rows_.at(image).size() == static_cast<std::size_t>(num_classes_);
  }
  bool dense() const {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (!row_is_dense(i)) return false;
    }
    return true;
  }

  ClassId top1(std::size_t image) const {
    auto r = row(image);
    if (r.empty()) throw Error("missing-prediction", model_name_ + ": no prediction for image " + images_->id(image));
    return std::min_element(r.begin(), r.end(), ranks_before)->cls;
  }

  // The k-th ranked class (k >= 1), or nullopt when fewer than k are stored.
  std::optional<ClassId> ranked(std::size_t image, std::size_t k) const {
    auto r = row(image);
    if (k == 0 || r.size() < k) return std::nullopt;
    if (k == 1) return std::min_element(r.begin(), r.end(), ranks_before)->cls;
    std::vector<Score> copy(r.begin(), r.end());
    std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(k - 1), copy.end(), ranks_before);
    return copy[k - 1].cls;
  }

  std::optional<Score> score(std::size_t image, ClassId cls) const {
    auto r = row(image);
    auto it = std::lower_bound(r.begin(), r.end(), cls,
                               [](const Score& s, ClassId c) { return to_int(s.cls) < to_int(c); });
    if (it == r.end() || it->cls != cls) return std::nullopt;
    return *it;
  }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
  }

  bool operator==(const PredictionSet& other) const {
    return model_name_ == other.model_name_ && same_images(images_, other.images_) &&
           num_classes_ == other.num_classes_ && metadata_ == other.metadata_ &&
           probabilities_derived_ == other.probabilities_derived_ && rows_ == other.rows_;
  }

  // Checks the stored-data invariants: probabilities in [0, 1] and dense
  // provided-probability rows summing to 1.
  void validate() const {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      double total = 0.0;
      for (const auto& s : rows_[i]) {
        require(std::isfinite(s.logit), "data", "non-finite logit for image " + images_->id(i));
        require(s.probability >= 0.0 && s.probability <= 1.0, "data",
                "probability out of range for image " + images_->id(i));
        total += s.probability;
      }
      if (!probabilities_derived_ && row_is_dense(i) && std::abs(total - 1.0) > kDenseProbabilityTolerance) {
        throw Error("data", model_name_ + ": dense probabilities for image " + images_->id(i) + " sum to " +
                                text::format_double(total));
      }
    }
  }

 private:
  std::string model_name_;
  RegistryPtr images_;
  std::int32_t num_classes_ = 0;
  std::map<std::string, std::string> metadata_;
  bool probabilities_derived_ = false;
  std::vector<std::vector<Score>> rows_;
};

enum class PredictionFormat { CsvSparse, BinaryDense };

inline PredictionFormat format_for_path(std::string_view path) {
  if (text::ends_with(path, ".bin") || text::ends_with(path, ".rlpred")) return PredictionFormat::BinaryDense;
  return PredictionFormat::CsvSparse;
}

struct IngestOptions {
  // When set, image ids must belong to it; otherwise a registry is built from
  // ids in order of first appearance.
  RegistryPtr images;
  // 0 means "max class id seen + 1".
  std::int32_t num_classes = 0;
};

namespace detail {

inline constexpr char kBinaryMagic[8] = {'R', 'L', 'P', 'R', 'E', 'D', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw Error("parse", path + ": truncated binary prediction file");
  return value;
}

inline std::string read_str(std::istream& in, const std::string& path) {
  auto n = read_pod<std::uint32_t>(in, path);
  if (n > (1u << 24)) throw Error("parse", path + ": implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("parse", path + ": truncated binary prediction file");
  return s;
}

inline PredictionSet ingest_csv(const std::string& path, const IngestOptions& options) {
  auto in = text::open_input(path);
  std::map<std::string, std::string> metadata;
  struct Row {
    std::size_t line;
    std::string image;
    std::int64_t cls;
    double logit;
    std::optional<double> probability;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    if (trimmed.front() == '#') {
      if (header_seen) continue;
      auto body = text::trim(trimmed.substr(1));
      auto eq = body.find('=');
      if (eq != std::string_view::npos) {
        metadata[std::string(text::trim(body.substr(0, eq)))] = std::string(text::trim(body.substr(eq + 1)));
      }
      continue;
    }
    auto fields = text::split_csv(trimmed);
    if (!fields) throw ParseError(path, line_no, "unterminated quote");
    if (!header_seen) {
      header_seen = true;
      if (fields->size() != 4 || (*fields)[0] != "image_id" || (*fields)[1] != "class_id" ||
          (*fields)[2] != "logit" || (*fields)[3] != "probability") {
        throw ParseError(path, line_no, "expected header image_id,class_id,logit,probability");
      }
      continue;
    }
    if (fields->size() != 4) throw ParseError(path, line_no, "expected 4 fields");
    auto& f = *fields;
    auto cls = text::parse_int(f[1]);
    if (!cls || *cls < 0) throw ParseError(path, line_no, "invalid class id");
    auto logit = text::parse_double(f[2]);
    if (!logit || !std::isfinite(*logit)) throw ParseError(path, line_no, "invalid logit");
    std::optional<double> prob;
    if (!text::trim(f[3]).empty()) {
      prob = text::parse_double(f[3]);
      if (!prob) throw ParseError(path, line_no, "invalid probability");
      if (!(*prob >= 0.0 && *prob <= 1.0)) throw ParseError(path, line_no, "probability out of range");
    }
    std::string image(text::trim(f[0]));
    if (image.empty()) throw ParseError(path, line_no, "empty image id");
    rows.push_back({line_no, std::move(image), *cls, *logit, prob});
  }
  if (!header_seen) throw ParseError(path, line_no, "missing header");

  std::size_t with_prob = 0;
  std::int64_t max_class = -1;
  for (const auto& r : rows) {
    with_prob += r.probability.has_value();
    max_class = std::max(max_class, r.cls);
  }
  if (with_prob != 0 && with_prob != rows.size()) {
    throw Error("parse", path + ": probability column must be either filled on every row or empty on every row");
  }

  RegistryPtr images = options.images;
  if (!images) {
    std::vector<std::string> ids;
    std::unordered_map<std::string, bool> seen;
    for (const auto& r : rows) {
      if (seen.emplace(r.image, true).second) ids.push_back(r.image);
    }
    images = std::make_shared<const ImageRegistry>(std::move(ids));
  }
  std::int32_t num_classes = options.num_classes > 0 ? options.num_classes : static_cast<std::int32_t>(max_class + 1);
  if (num_classes <= 0) num_classes = 1;

  std::string model = metadata.count("model_name") ? metadata["model_name"] : text::file_stem(path);
  metadata.erase("model_name");
  bool derived = with_prob == 0 || metadata.count("probabilities");
  metadata.erase("probabilities");

  PredictionSet set(model, images, num_classes);
  set.metadata() = std::move(metadata);
  std::vector<std::vector<Score>> per_image(images->size());
  std::vector<std::map<std::int64_t, std::size_t>> seen(images->size());
  for (const auto& r : rows) {
    auto idx = images->find(r.image);
    if (!idx) throw ParseError(path, r.line, "unknown image id " + r.image);
    if (r.cls >= num_classes) throw ParseError(path, r.line, "class id out of range");
    auto [it, inserted] = seen[*idx].emplace(r.cls, r.line);
    if (!inserted) {
      throw ParseError(path, r.line, "duplicate entry for (" + r.image + ", " + std::to_string(r.cls) +
                                         "), first at line " + std::to_string(it->second));
    }
    per_image[*idx].push_back({class_id(r.cls), r.logit, r.probability.value_or(0.0)});
  }
  for (std::size_t i = 0; i < per_image.size(); ++i) set.set_row(i, std::move(per_image[i]));
  if (derived) set.derive_probabilities();
  try {
    set.validate();
  } catch (const Error& e) {
    throw Error("data", path + ": " + e.what());
  }
  return set;
}

inline PredictionSet ingest_binary(const std::string& path, const IngestOptions& options) {
  auto in = text::open_input(path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kBinaryMagic, sizeof magic) != 0) {
    throw Error("parse", path + ": not a dense binary prediction file");
  }
  std::string model = read_str(in, path);
  auto derived = read_pod<std::uint8_t>(in, path);
  auto meta_count = read_pod<std::uint32_t>(in, path);
  std::map<std::string, std::string> metadata;
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = read_str(in, path);
    metadata[key] = read_str(in, path);
  }
  auto n_images = read_pod<std::uint32_t>(in, path);
  auto n_classes = read_pod<std::uint32_t>(in, path);
  if (n_classes == 0 || n_classes > (1u << 20)) throw Error("parse", path + ": invalid class count");
  if (options.num_classes > 0 && static_cast<std::uint32_t>(options.num_classes) != n_classes) {
    throw Error("data", path + ": class count does not match the expected " + std::to_string(options.num_classes));
  }
  std::vector<std::string> ids(n_images);
  std::vector<std::vector<Score>> rows(n_images);
  std::vector<double> logits(n_classes), probs(n_classes);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    ids[i] = read_str(in, path);
    in.read(reinterpret_cast<char*>(logits.data()), static_cast<std::streamsize>(n_classes * sizeof(double)));
    in.read(reinterpret_cast<char*>(probs.data()), static_cast<std::streamsize>(n_classes * sizeof(double)));
    if (!in) throw Error("parse", path + ": truncated binary prediction file");
    rows[i].reserve(n_classes);
    for (std::uint32_t c = 0; c < n_classes; ++c) {
      if (!std::isfinite(logits[c])) throw Error("parse", path + ": non-finite logit for image " + ids[i]);
      if (!(probs[c] >= 0.0 && probs[c] <= 1.0)) throw Error("parse", path + ": probability out of range for image " + ids[i]);
      rows[i].push_back({class_id(c), logits[c], probs[c]});
    }
  }
  RegistryPtr images = options.images;
  if (!images) images = std::make_shared<const ImageRegistry>(ids);
  PredictionSet set(model, images, static_cast<std::int32_t>(n_classes));
  set.metadata() = std::move(metadata);
  std::vector<char> filled(images->size(), 0);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    auto idx = images->find(ids[i]);
    if (!idx) throw Error("parse", path + ": unknown image id " + ids[i]);
    if (filled[*idx]) throw Error("parse", path + ": duplicate image id " + ids[i]);
    filled[*idx] = 1;
    set.set_row(*idx, std::move(rows[i]));
  }
  if (derived) set.derive_probabilities();
  try {
    set.validate();
  } catch (const Error& e) {
    throw Error("data", path + ": " + e.what());
  }
  return set;
}

}  // namespace detail

inline PredictionSet ingest_predictions(const std::string& path, PredictionFormat format,
                                        const IngestOptions& options = {}) {
  return format == PredictionFormat::BinaryDense ? detail::ingest_binary(path, options)
                                                 : detail::ingest_csv(path, options);
}

inline PredictionSet ingest_predictions(const std::string& path, const IngestOptions& options = {}) {
  return ingest_predictions(path, format_for_path(path), options);
}

inline void export_predictions(const PredictionSet& set, const std::string& path, PredictionFormat format) {
  auto out = text::open_output(path);
  const auto& images = *set.images();
  if (format == PredictionFormat::CsvSparse) {
    out << "# model_name=" << set.model_name() << '\n';
    if (set.probabilities_derived()) out << "# probabilities=derived\n";
    for (const auto& [key, value] : set.metadata()) out << "# " << key << '=' << value << '\n';
    out << "image_id,class_id,logit,probability\n";
    for (std::size_t i = 0; i < set.image_count(); ++i) {
      for (const auto& s : set.row(i)) {
        out << text::csv_escape(images.id(i)) << ',' << to_int(s.cls) << ',' << text::format_double(s.logit) << ',';
        if (!set.probabilities_derived()) out << text::format_double(s.probability);
        out << '\n';
      }
    }
  } else {
    require(set.dense(), "data", "binary export requires dense rows for every image");
    out.write(detail::kBinaryMagic, sizeof detail::kBinaryMagic);
    detail::write_str(out, set.model_name());
    detail::write_pod<std::uint8_t>(out, set.probabilities_derived() ? 1 : 0);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.metadata().size()));
    for (const auto& [key, value] : set.metadata()) {
      detail::write_str(out, key);
      detail::write_str(out, value);
    }
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.image_count()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.num_classes()));
    for (std::size_t i = 0; i < set.image_count(); ++i) {
      detail::write_str(out, images.id(i));
      for (const auto& s : set.row(i)) detail::write_pod(out, s.logit);
      for (const auto& s : set.row(i)) detail::write_pod(out, s.probability);
    }
  }
  if (!out) throw Error("io", "write failed: " + path);
}

inline void export_predictions(const PredictionSet& set, const std::string& path) {
  export_predictions(set, path, format_for_path(path));
}

}  // namespace realabel
