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

#include <cmath>
#include <fstream>
#include <random>

#include "fixtures.hpp"

using namespace realabel;

namespace {

std::string data_file(const std::string& name) { return std::string(REALABEL_TEST_DATA) + "/" + name; }

// Independent OLS via the 2x2 normal equations and the covariance matrix
// sigma^2 (X'X)^-1.
struct Ols {
  double slope, intercept, se;
};

Ols normal_equations(const std::vector<RegressionPoint>& pts) {
  double n = 0, sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (const auto& p : pts) {
    n += 1;
    sx += p.original;
    sxx += p.original * p.original;
    sy += p.real;
    sxy += p.original * p.real;
  }
  double det = n * sxx - sx * sx;
  double inv11 = n / det;  // (X'X)^-1 entry for the slope
  Ols o;
  o.intercept = (sxx * sy - sx * sxy) / det;
  o.slope = (n * sxy - sx * sy) / det;
  double rss = 0;
  for (const auto& p : pts) rss += std::pow(p.real - o.intercept - o.slope * p.original, 2);
  o.se = std::sqrt(rss / (n - 2) * inv11);
  return o;
}

}  // namespace

TEST(RealAccuracy, HandCountedFixture) {
  auto images = fixtures::make_registry(6);
  LabelSet labels(images);
  labels.set(0, {class_id(1)});
  labels.set(1, {class_id(1), class_id(2)});
  labels.set(2, {});  // excluded
  labels.set(3, {class_id(0)});
  labels.set(4, {class_id(3), class_id(4)});
  labels.set(5, {class_id(2)});
  auto pred = fixtures::with_top1("m", images, 5, {1, 2, 0, 1, 4, 3});
  auto count = real_accuracy_count(pred, labels);
  EXPECT_EQ(count.evaluated, 5u);
  EXPECT_EQ(count.correct, 3u);  // images 0, 1, 4
  EXPECT_DOUBLE_EQ(real_accuracy(pred, labels), 0.6);

  auto original = fixtures::make_original(images, {1, 1, 0, 0, 3, 2});
  EXPECT_DOUBLE_EQ(original_accuracy(pred, original), 2.0 / 6.0);  // images 0 and 2
}

TEST(RealAccuracy, SecondAndThirdRankedPredictions) {
  auto images = fixtures::make_registry(2);
  LabelSet labels(images);
  labels.set(0, {class_id(2)});
  labels.set(1, {class_id(0)});
  // Image 0 ranks 3 > 2 > 1 > 0; image 1 ranks 0 > 1 > 2 > 3.
  auto pred = fixtures::make_dense("m", images, 4, [](std::size_t i, int c) { return static_cast<double>(i == 0 ? c : -c); });
  EXPECT_DOUBLE_EQ(real_accuracy(pred, labels, 1), 0.5);
  EXPECT_DOUBLE_EQ(real_accuracy(pred, labels, 2), 0.5);
  EXPECT_DOUBLE_EQ(real_accuracy(pred, labels, 3), 0.0);
  auto report = accuracy_report(pred, labels);
  EXPECT_EQ(report.evaluated_image_count, 2u);
  EXPECT_DOUBLE_EQ(report.real_top2, 0.5);
}

TEST(RealAccuracy, RandomFixtureAgainstRecount) {
  std::mt19937_64 rng(11);
  const int classes = 12;
  auto images = fixtures::make_registry(500);
  LabelSet labels(images);
  std::vector<int> orig(500);
  for (std::size_t i = 0; i < 500; ++i) {
    orig[i] = static_cast<int>(rng() % classes);
    std::size_t k = rng() % 4;  // 0 means excluded
    for (std::size_t j = 0; j < k; ++j) labels.add(i, class_id(static_cast<int>(rng() % classes)));
  }
  auto pred = fixtures::random_dense("m", images, classes, rng);
  std::size_t correct = 0, evaluated = 0, orig_correct = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (pred.row(i)[static_cast<std::size_t>(c)].logit > pred.row(i)[static_cast<std::size_t>(best)].logit) best = c;
    }
    orig_correct += best == orig[i];
    if (labels.labels(i).empty()) continue;
    ++evaluated;
    for (ClassId c : labels.labels(i)) correct += to_int(c) == best;
  }
  auto count = real_accuracy_count(pred, labels);
  EXPECT_EQ(count.evaluated, evaluated);
  EXPECT_EQ(count.correct, correct);
  EXPECT_EQ(original_accuracy_count(pred, fixtures::make_original(images, orig)).correct, orig_correct);
}

TEST(RealAccuracy, MissingPredictionIsAnError) {
  auto images = fixtures::make_registry(3);
  LabelSet labels(images);
  for (std::size_t i = 0; i < 3; ++i) labels.set(i, {class_id(0)});
  auto fewer = fixtures::make_registry(2);
  auto pred = fixtures::with_top1("m", fewer, 3, {0, 0});
  try {
    real_accuracy(pred, labels);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "missing-prediction");
  }
}

TEST(Preference, CountsOnlyDiscriminatingImages) {
  auto images = fixtures::make_registry(6);
  LabelSet labels(images);
  labels.set(0, {class_id(1)});              // model right, label wrong
  labels.set(1, {class_id(0)});              // label right, model wrong
  labels.set(2, {class_id(0), class_id(1)}); // both right: not discriminating
  labels.set(3, {class_id(2)});              // both wrong
  labels.set(4, {});                         // excluded
  labels.set(5, {class_id(1)});              // model right, label wrong
  auto original = fixtures::make_original(images, {0, 0, 0, 0, 0, 0});
  auto pred = fixtures::with_top1("m", images, 3, {1, 1, 1, 1, 1, 1});
  auto r = preference_rate(pred, original, labels);
  EXPECT_EQ(r.n_discriminating, 3u);
  EXPECT_EQ(r.model_preferred, 2u);
  EXPECT_DOUBLE_EQ(r.rate, 2.0 / 3.0);

  auto agree = fixtures::with_top1("a", images, 3, {0, 0, 0, 0, 0, 0});
  EXPECT_THROW(preference_rate(agree, original, labels), Error);
}

TEST(Ensemble, SumsLogits) {
  std::mt19937_64 rng(4);
  auto images = fixtures::make_registry(30);
  auto a = fixtures::random_dense("a", images, 7, rng);
  auto b = fixtures::random_dense("b", images, 7, rng);
  std::vector<PredictionSet> models{a, b};
  auto e = ensemble_logits(models);
  EXPECT_EQ(e.model_name(), "ensemble(a+b)");
  for (std::size_t i = 0; i < 30; ++i) {
    double z = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_DOUBLE_EQ(e.row(i)[c].logit, a.row(i)[c].logit + b.row(i)[c].logit);
      z += std::exp(e.row(i)[c].logit);
    }
    EXPECT_NEAR(e.row(i)[0].probability, std::exp(e.row(i)[0].logit) / z, 1e-12);
  }
  std::vector<double> w{2.0, 0.0};
  auto weighted = ensemble_logits(models, w);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(weighted.top1(i), a.top1(i));
}

TEST(Ensemble, SparseMemberIsRejected) {
  auto images = fixtures::make_registry(2);
  PredictionSet sparse("s", images, 5);
  sparse.set_row(0, {{class_id(1), 2.0, 0.0}});
  sparse.set_row(1, {{class_id(2), 2.0, 0.0}});
  std::mt19937_64 rng(1);
  std::vector<PredictionSet> models{fixtures::random_dense("d", images, 5, rng), sparse};
  try {
    ensemble_logits(models);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("densely"), std::string::npos);
  }
}

TEST(Regression, MatchesNormalEquationsOracle) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.5, 0.9);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<RegressionPoint> pts;
    std::size_t n = 3 + rng() % 20;
    for (std::size_t i = 0; i < n; ++i) {
      double x = u(rng);
      pts.push_back({"m" + std::to_string(i), x, 0.2 + 0.8 * x + noise(rng)});
    }
    auto fit = fit_line(pts);
    auto o = normal_equations(pts);
    EXPECT_NEAR(fit.slope, o.slope, 1e-9);
    EXPECT_NEAR(fit.intercept, o.intercept, 1e-9);
    EXPECT_NEAR(fit.slope_std_error, o.se, 1e-9);
  }
}

TEST(Regression, SplitHalvesAndZTest) {
  std::mt19937_64 rng(5);
  std::vector<RegressionPoint> pts;
  for (int i = 0; i < 21; ++i) {
    double x = 0.5 + 0.02 * i;
    double y = i < 10 ? 0.1 + 1.0 * x : 0.3 + 0.6 * x;
    pts.push_back({"m" + std::to_string(i), x, y + std::normal_distribution<double>(0, 0.002)(rng)});
  }
  auto r = split_regression(pts);
  EXPECT_EQ(r.first.n, 10u);
  EXPECT_EQ(r.second.n, 11u);
  std::vector<RegressionPoint> lo(pts.begin(), pts.begin() + 10), hi(pts.begin() + 10, pts.end());
  auto a = normal_equations(lo), b = normal_equations(hi);
  EXPECT_NEAR(r.first.slope, a.slope, 1e-9);
  EXPECT_NEAR(r.second.slope, b.slope, 1e-9);
  double z = (a.slope - b.slope) / std::sqrt(a.se * a.se + b.se * b.se);
  EXPECT_NEAR(r.z_statistic, z, 1e-6 * std::abs(z));
  EXPECT_NEAR(r.p_value, std::erfc(std::abs(z) / std::sqrt(2.0)), 1e-12);
  EXPECT_LT(r.p_value, 1e-6);
}

TEST(Regression, CollinearPointsGiveZeroZ) {
  std::vector<RegressionPoint> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({"m" + std::to_string(i), 0.1 * i, 0.3 + 0.5 * 0.1 * i});
  auto r = split_regression(pts);
  EXPECT_NEAR(r.first.slope, 0.5, 1e-12);
  EXPECT_NEAR(r.second.slope, 0.5, 1e-12);
  EXPECT_EQ(r.z_statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Regression, InvariantUnderOrderingAndRenaming) {
  std::mt19937_64 rng(9);
  std::vector<RegressionPoint> pts;
  for (int i = 0; i < 15; ++i) {
    pts.push_back({"m" + std::to_string(i), std::uniform_real_distribution<double>(0.5, 0.9)(rng),
                   std::uniform_real_distribution<double>(0.6, 0.95)(rng)});
  }
  auto base = split_regression(pts);
  for (int rep = 0; rep < 10; ++rep) {
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& p : shuffled) p.model = "x" + p.model;
    auto r = split_regression(shuffled);
    EXPECT_DOUBLE_EQ(r.first.slope, base.first.slope);
    EXPECT_DOUBLE_EQ(r.second.slope, base.second.slope);
    EXPECT_DOUBLE_EQ(r.z_statistic, base.z_statistic);
  }
}

TEST(Regression, TooFewPointsOrNoVariance) {
  std::vector<RegressionPoint> five(5, {"m", 0.5, 0.6});
  EXPECT_THROW(split_regression(five), Error);
  std::vector<RegressionPoint> flat(3, {"m", 0.5, 0.6});
  EXPECT_THROW(fit_line(flat), Error);
}

TEST(AccuracyTable, LoadsReferenceValues) {
  auto pts = load_accuracy_table(data_file("accuracies.csv"));
  ASSERT_EQ(pts.size(), 31u);
  auto find = [&](const std::string& name) {
    for (const auto& p : pts)
      if (p.model == name) return p;
    ADD_FAILURE() << name;
    return RegressionPoint{};
  };
  EXPECT_DOUBLE_EQ(find("ILSVRC-2012 labels").real, 0.9002);
  EXPECT_DOUBLE_EQ(find("ILSVRC-2012 labels").original, 1.0);
  EXPECT_DOUBLE_EQ(find("BiT-L").real, 0.9054);
  EXPECT_DOUBLE_EQ(find("Fix-ResNeXt-101, 32x48d, IG").original, 0.8636);
  EXPECT_DOUBLE_EQ(find("AlexNet").original, 0.5636);
}

TEST(AccuracyTable, FractionsAreNotRescaled) {
  fixtures::TempDir dir;
  {
    std::ofstream out(dir.file("t.csv"));
    out << "a,0.9,0.8\nb,0.7,0.6\n";
  }
  auto pts = load_accuracy_table(dir.file("t.csv"));
  EXPECT_DOUBLE_EQ(pts[0].real, 0.9);
  {
    std::ofstream out(dir.file("bad.csv"));
    out << "model,real_acc,orig_acc\na,90,80\nb,x,1\n";
  }
  try {
    load_accuracy_table(dir.file("bad.csv"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
}

TEST(AccuracyTable, ReferenceSplitRegression) {
  auto pts = load_accuracy_table(data_file("accuracies.csv"));
  auto exclude = load_name_list(data_file("regression_exclude.txt"));
  ASSERT_EQ(exclude.size(), 7u);
  auto chosen = select_points(pts, {}, exclude);
  ASSERT_EQ(chosen.size(), 24u);
  auto r = split_regression(chosen);
  EXPECT_NEAR(r.first.slope, 0.86, 0.10);
  EXPECT_NEAR(r.second.slope, 0.51, 0.10);
  EXPECT_LT(r.second.slope, r.first.slope);
  EXPECT_LT(r.p_value, 0.001);
  std::vector<std::string> bogus{"no such model"};
  EXPECT_THROW(select_points(pts, bogus, {}), Error);
}

TEST(RealAccuracy, OriginalLabelsScoredAsAModel) {
  auto images = fixtures::make_registry(4);
  auto original = fixtures::make_original(images, {0, 1, 2, 3});
  LabelSet labels(images);
  labels.set(0, {class_id(0)});
  labels.set(1, {class_id(2)});
  labels.set(2, {});
  labels.set(3, {class_id(1), class_id(3)});
  auto as_model = original_as_predictions(original, 4);
  auto count = real_accuracy_count(as_model, labels);
  EXPECT_EQ(count.evaluated, 3u);
  EXPECT_EQ(count.correct, 2u);
  EXPECT_DOUBLE_EQ(original_accuracy(as_model, original), 1.0);
  EXPECT_THROW(real_accuracy(as_model, labels, 2), Error);
}
