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

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "fixtures.hpp"

using namespace realabel;
using fixtures::TempDir;

namespace {

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename F>
std::string error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return "";
}

template <typename F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ImageRegistry, BijectionAndUnknownIds) {
  ImageRegistry r({"b", "a", "c"});
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r.index_of(r.id(i)), i);
  EXPECT_FALSE(r.find("zz"));
  EXPECT_EQ(error_kind([&] { r.index_of("zz"); }), "unknown-id");
  EXPECT_THROW(ImageRegistry({"a", "a"}), Error);
  EXPECT_THROW(ImageRegistry({""}), Error);
}

TEST(OriginalLabels, RoundTrip) {
  TempDir dir;
  auto o = fixtures::make_original(fixtures::make_registry(5), {3, 1, 4, 1, 5});
  write_original_labels(o, dir.file("orig.csv"));
  auto back = load_original_labels(dir.file("orig.csv"));
  EXPECT_EQ(*back.images, *o.images);
  EXPECT_EQ(back.labels, o.labels);
}

TEST(Predictions, SparseCsvTop1IsArgmax) {
  TempDir dir;
  write_file(dir.file("m.csv"),
             "image_id,class_id,logit,probability\n"
             "x,4,2.0,\nx,7,1.0,\nx,9,0.5,\n");
  auto p = ingest_predictions(dir.file("m.csv"));
  EXPECT_EQ(p.model_name(), "m");
  EXPECT_EQ(p.top1(0), class_id(4));
  EXPECT_TRUE(p.probabilities_derived());
  double total = 0;
  for (const auto& s : p.row(0)) total += s.probability;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Predictions, ProbabilityOutOfRangeNamesLine) {
  TempDir dir;
  write_file(dir.file("m.csv"), "image_id,class_id,logit,probability\nx,0,1.0,0.5\nx,1,0.0,1.3\n");
  auto msg = error_text([&] { ingest_predictions(dir.file("m.csv")); });
  EXPECT_NE(msg.find("probability out of range"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
}

TEST(Predictions, DuplicateEntryRejected) {
  TempDir dir;
  write_file(dir.file("m.csv"), "image_id,class_id,logit,probability\nx,0,1.0,\ny,0,1.0,\nx,0,2.0,\n");
  auto msg = error_text([&] { ingest_predictions(dir.file("m.csv")); });
  EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":4:"), std::string::npos) << msg;
}

TEST(Predictions, MalformedRowsCarryLineNumbers) {
  TempDir dir;
  write_file(dir.file("a.csv"), "image_id,class_id,logit\n");
  EXPECT_EQ(error_kind([&] { ingest_predictions(dir.file("a.csv")); }), "parse");
  write_file(dir.file("b.csv"), "image_id,class_id,logit,probability\nx,zero,1.0,\n");
  EXPECT_NE(error_text([&] { ingest_predictions(dir.file("b.csv")); }).find(":2:"), std::string::npos);
  write_file(dir.file("c.csv"), "image_id,class_id,logit,probability\nx,0,nan,\n");
  EXPECT_EQ(error_kind([&] { ingest_predictions(dir.file("c.csv")); }), "parse");
}

TEST(Predictions, DenseProvidedProbabilitiesMustSumToOne) {
  TempDir dir;
  write_file(dir.file("m.csv"),
             "image_id,class_id,logit,probability\nx,0,1.0,0.5\nx,1,0.0,0.4\n");
  IngestOptions opt;
  opt.num_classes = 2;
  EXPECT_EQ(error_kind([&] { ingest_predictions(dir.file("m.csv"), opt); }), "data");
  write_file(dir.file("ok.csv"),
             "image_id,class_id,logit,probability\nx,0,1.0,0.50004\nx,1,0.0,0.5\n");
  EXPECT_NO_THROW(ingest_predictions(dir.file("ok.csv"), opt));
}

TEST(Predictions, MixedProbabilityColumnRejected) {
  TempDir dir;
  write_file(dir.file("m.csv"), "image_id,class_id,logit,probability\nx,0,1.0,0.5\nx,1,0.0,\n");
  EXPECT_THROW(ingest_predictions(dir.file("m.csv")), Error);
}

// Randomized round trips through both formats, with a shared registry.
TEST(Predictions, RoundTripBothFormats) {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto images = fixtures::make_registry(20);
    auto p = fixtures::random_dense("model_" + std::to_string(seed), images, 10, rng);
    p.metadata()["source"] = "seed " + std::to_string(seed);
    IngestOptions opt{images, 10};
    for (auto fmt : {PredictionFormat::CsvSparse, PredictionFormat::BinaryDense}) {
      auto path = dir.file(fmt == PredictionFormat::CsvSparse ? "p.csv" : "p.bin");
      export_predictions(p, path, fmt);
      auto back = ingest_predictions(path, fmt, opt);
      EXPECT_EQ(back, p) << "seed " << seed;
      export_predictions(back, path + ".again", fmt);
      EXPECT_EQ(slurp(path), slurp(path + ".again"));
    }
  }
}

TEST(Predictions, SparseRoundTripKeepsProvidedProbabilities) {
  TempDir dir;
  auto images = fixtures::make_registry(3);
  PredictionSet p("sparse", images, 50);
  p.set_row(0, {{class_id(7), 3.25, 0.75}, {class_id(2), 1.0, 0.125}});
  p.set_row(1, {{class_id(49), -1.0, 0.0}});
  p.set_row(2, {{class_id(0), 0.1, 1.0}});
  export_predictions(p, dir.file("s.csv"));
  auto back = ingest_predictions(dir.file("s.csv"), IngestOptions{images, 50});
  EXPECT_EQ(back, p);
  EXPECT_FALSE(back.probabilities_derived());
}

TEST(Predictions, TiesRankTowardLowerClass) {
  auto images = fixtures::make_registry(1);
  PredictionSet p("t", images, 4);
  p.set_row(0, {{class_id(3), 1.0, 0.25}, {class_id(1), 1.0, 0.25}, {class_id(2), 1.0, 0.25}, {class_id(0), 0.0, 0.25}});
  EXPECT_EQ(p.top1(0), class_id(1));
  EXPECT_EQ(p.ranked(0, 2), class_id(2));
  EXPECT_EQ(p.ranked(0, 3), class_id(3));
  EXPECT_EQ(p.ranked(0, 5), std::nullopt);
}

TEST(Manifest, RoundTripAndFlags) {
  TempDir dir;
  auto m = fixtures::make_manifest(6, {1}, {2, 3});
  write_class_manifest(m, dir.file("classes.csv"));
  auto back = load_class_manifest(dir.file("classes.csv"));
  EXPECT_EQ(back.classes(), m.classes());
  EXPECT_TRUE(back.is_animal(class_id(2)));
  EXPECT_TRUE(back.is_finegrained_animal(class_id(3)));
  EXPECT_FALSE(back.is_finegrained_animal(class_id(1)));
  EXPECT_EQ(error_kind([&] { back.at(class_id(99)); }), "unknown-id");
}

TEST(Hierarchy, ChainSubtreeAndSiblingLca) {
  ClassHierarchy h({}, {{"b", "a"}, {"c", "b"}});
  EXPECT_EQ(h.subtree("a"), (std::vector<std::string>{"a", "b", "c"}));
  ClassHierarchy t({}, {{"x", "p"}, {"y", "p"}, {"p", "root"}});
  EXPECT_EQ(t.lca("x", "y"), "p");
  EXPECT_EQ(t.distance("x", "y"), 2u);
  EXPECT_EQ(t.distance("x", "root"), 2u);
}

TEST(Hierarchy, CycleAndMissingNodeRejected) {
  EXPECT_THROW(ClassHierarchy({}, {{"a", "b"}, {"b", "c"}, {"c", "a"}}), Error);
  ClassHierarchy h({}, {{"n10000", "root"}});
  auto m = fixtures::make_manifest(2);
  auto msg = error_text([&] { h.attach(m); });
  EXPECT_NE(msg.find("missing node"), std::string::npos) << msg;
}

// A generated 1000-class tree: every class resolves and the declared node
// count is honoured.
TEST(Hierarchy, ThousandClassFixtureSelfConsistent) {
  TempDir dir;
  auto m = fixtures::make_manifest(1000);
  std::ofstream out(dir.file("h.csv"));
  std::size_t nodes = 1 + 10 + 1000;
  out << "# nodes=" << nodes << "\nchild_wnid,parent_wnid\n";
  for (int g = 0; g < 10; ++g) out << "g" << g << ",root\n";
  for (int c = 0; c < 1000; ++c) out << "n" << 10000 + c << ",g" << c % 10 << "\n";
  out.close();
  auto h = load_hierarchy(dir.file("h.csv"), &m);
  EXPECT_EQ(h.node_count(), nodes);
  for (int c = 0; c < 1000; ++c) EXPECT_TRUE(h.class_node(class_id(c)).has_value());
  EXPECT_EQ(h.class_distance(class_id(0), class_id(10)), 2u);
  EXPECT_EQ(h.class_distance(class_id(0), class_id(1)), 4u);

  std::ofstream bad(dir.file("bad.csv"));
  bad << "# nodes=5\nb,a\n";
  bad.close();
  EXPECT_THROW(load_hierarchy(dir.file("bad.csv")), Error);
}

TEST(Labels, TwoImageRoundTrip) {
  TempDir dir;
  auto images = std::make_shared<const ImageRegistry>(std::vector<std::string>{"a", "b"});
  LabelSet l(images);
  l.set(0, {class_id(2), class_id(1)});
  export_labels(l, dir.file("l.jsonl"));
  EXPECT_EQ(slurp(dir.file("l.jsonl")), "{\"image_id\":\"a\",\"labels\":[1,2]}\n{\"image_id\":\"b\",\"labels\":[]}\n");
  auto back = ingest_labels(dir.file("l.jsonl"));
  EXPECT_EQ(back, l);
  EXPECT_TRUE(back.excluded(1));
  EXPECT_EQ(back.evaluated_count(), 1u);
}

TEST(Labels, AllEmptyMarksEveryImageExcluded) {
  TempDir dir;
  LabelSet l(fixtures::make_registry(4));
  export_labels(l, dir.file("l.jsonl"));
  auto back = ingest_labels(dir.file("l.jsonl"));
  EXPECT_EQ(back.excluded_count(), 4u);
}

TEST(Labels, RandomizedRoundTripIsIdentity) {
  TempDir dir;
  std::mt19937_64 rng(7);
  for (int round = 0; round < 20; ++round) {
    auto images = fixtures::make_registry(1 + rng() % 40);
    LabelSet l(images);
    for (std::size_t i = 0; i < images->size(); ++i) {
      std::size_t k = rng() % 4;
      for (std::size_t j = 0; j < k; ++j) l.add(i, class_id(static_cast<int>(rng() % 1000)));
    }
    export_labels(l, dir.file("l.jsonl"));
    auto back = ingest_labels(dir.file("l.jsonl"), images);
    EXPECT_EQ(back, l);
    export_labels(back, dir.file("l2.jsonl"));
    EXPECT_EQ(slurp(dir.file("l.jsonl")), slurp(dir.file("l2.jsonl")));
  }
}

TEST(Labels, UnknownAndMissingImagesAreErrors) {
  TempDir dir;
  auto images = fixtures::make_registry(2);
  write_file(dir.file("l.jsonl"), "{\"image_id\":\"img00000\",\"labels\":[1]}\n{\"image_id\":\"nope\",\"labels\":[]}\n");
  EXPECT_THROW(ingest_labels(dir.file("l.jsonl"), images), Error);
  write_file(dir.file("m.jsonl"), "{\"image_id\":\"img00000\",\"labels\":[1]}\n");
  EXPECT_THROW(ingest_labels(dir.file("m.jsonl"), images), Error);
}

TEST(Labels, ReleasedArrayFormat) {
  TempDir dir;
  write_file(dir.file("real.json"), "[[1, 2], [], [5]]");
  auto images = std::make_shared<const ImageRegistry>(
      std::vector<std::string>{"ILSVRC2012_val_00000001", "ILSVRC2012_val_00000002", "ILSVRC2012_val_00000003"});
  auto l = ingest_released_labels(dir.file("real.json"), images);
  EXPECT_TRUE(l.contains(0, class_id(2)));
  EXPECT_TRUE(l.excluded(1));
  EXPECT_EQ(l.label_count(), 3u);
}

TEST(Gold, RoundTrip) {
  TempDir dir;
  auto images = fixtures::make_registry(10);
  GoldStandard g;
  g.images = images;
  g.expert_count = 5;
  g.sets[3] = {class_id(1), class_id(4)};
  g.sets[7] = {class_id(0)};
  export_gold(g, dir.file("g.jsonl"));
  auto back = ingest_gold(dir.file("g.jsonl"), images);
  EXPECT_EQ(back.sets, g.sets);
  EXPECT_EQ(back.pair_count(), 3u);
}

TEST(Text, CsvSplitAndNumbers) {
  auto f = text::split_csv("a,\"b,c\",\"d\"\"e\"");
  ASSERT_TRUE(f);
  EXPECT_EQ(*f, (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_FALSE(text::split_csv("\"open"));
  EXPECT_EQ(text::parse_double(" 1.5 "), 1.5);
  EXPECT_FALSE(text::parse_double("1.5x"));
  for (double v : {0.1, 1e-300, 123456.789, -2.5}) EXPECT_EQ(text::parse_double(text::format_double(v)), v);
}
