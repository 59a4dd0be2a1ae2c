#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "transclaw/metrics.hpp"

using namespace transclaw;
using tctest::Mask;

namespace {

constexpr std::size_t kN = 16;

Mask with_pixels(std::size_t h, std::size_t w, std::initializer_list<Pixel> pixels) {
  Mask m(h * w, 0);
  for (auto p : pixels) m[p.y * w + p.x] = 1;
  return m;
}

}  // namespace

TEST(Dice, WorkedValues) {
  const Mask a{1, 1, 0, 0};
  EXPECT_EQ(*dice_per_class(a, a, 2)[1], 1.0);
  const Mask b{0, 0, 1, 1};
  EXPECT_EQ(*dice_per_class(a, b, 2)[1], 0.0);
  const Mask c{0, 1, 1, 0};
  EXPECT_EQ(*dice_per_class(a, c, 2)[1], 0.5);
}

TEST(Dice, AbsentClassIsUndefined) {
  const Mask a{0, 1, 1, 0};
  const auto d = dice_per_class(a, a, 3);
  EXPECT_TRUE(d[1].has_value());
  EXPECT_FALSE(d[2].has_value());
  EXPECT_THROW(dice_per_class(a, Mask{0, 1, 1}, 3), DimensionError);
  EXPECT_THROW(dice_per_class(a, Mask{0, 1, 3, 0}, 3), InvalidArgument);
}

TEST(Dice, MatchesSetCountsAndIsSymmetric) {
  std::mt19937_64 rng(1);
  for (int seed = 0; seed < 120; ++seed) {
    Mask p(kN * kN), t(kN * kN);
    for (auto& v : p) v = static_cast<std::uint8_t>(rng() % 4);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 4);
    const auto d = dice_per_class(p, t, 4);
    const auto r = dice_per_class(t, p, 4);
    for (std::uint8_t k = 0; k < 4; ++k) {
      bool defined = false;
      const double want = tctest::brute_dice(p, t, k, &defined);
      if (!defined) {
        EXPECT_FALSE(d[k].has_value());
        continue;
      }
      EXPECT_EQ(*d[k], want);
      EXPECT_EQ(*d[k], *r[k]);
    }
  }
}

TEST(Boundary, FourAdjacencyAndImageEdge) {
  const Mask full(9, 1);
  const auto b = boundary_pixels(full, 3, 3);
  EXPECT_EQ(b.size(), 8u);
  EXPECT_TRUE(std::find(b.begin(), b.end(), Pixel{1, 1}) == b.end());
  const Mask plus{0, 1, 0, 1, 1, 1, 0, 1, 0};
  const auto c = boundary_pixels(plus, 3, 3);
  EXPECT_EQ(c, (std::vector<Pixel>{{0, 1}, {1, 0}, {1, 2}, {2, 1}}));
}

TEST(DistanceTransform, MatchesBruteForce) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng() % 20, w = 1 + rng() % 20;
    Mask m(h * w, 0);
    for (auto& v : m) v = rng() % 9 == 0;
    const auto d = squared_distance_transform(m, h, w);
    const bool any = std::find(m.begin(), m.end(), 1) != m.end();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::int64_t best = -1;
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx) {
            if (!m[yy * w + xx]) continue;
            const auto dy = static_cast<std::int64_t>(y) - static_cast<std::int64_t>(yy);
            const auto dx = static_cast<std::int64_t>(x) - static_cast<std::int64_t>(xx);
            if (best < 0 || dy * dy + dx * dx < best) best = dy * dy + dx * dx;
          }
        EXPECT_EQ(d[y * w + x], any ? best : -1);
      }
  }
}

TEST(Hausdorff, WorkedValues) {
  const auto a = with_pixels(8, 8, {{0, 0}});
  const auto b = with_pixels(8, 8, {{3, 4}});
  EXPECT_EQ(*average_hausdorff(a, b, 8, 8), 5.0);
  EXPECT_EQ(*average_hausdorff(b, a, 8, 8), 5.0);
  const auto blob = with_pixels(8, 8, {{1, 1}, {1, 2}, {2, 1}, {2, 2}, {5, 5}});
  EXPECT_EQ(*average_hausdorff(blob, blob, 8, 8), 0.0);
  EXPECT_EQ(*hd95(blob, blob, 8, 8), 0.0);
  EXPECT_FALSE(average_hausdorff(Mask(64, 0), blob, 8, 8).has_value());
  EXPECT_FALSE(hd95(blob, Mask(64, 0), 8, 8).has_value());
}

TEST(Hausdorff, OutlierExcludedAtNinetyFifthPercentile) {
  Mask truth(kN * kN, 0);
  for (std::size_t x = 0; x < 12; ++x) {
    truth[1 * kN + x] = 1;
    truth[2 * kN + x] = 1;
  }
  Mask pred = truth;
  pred[14 * kN + 15] = 1;
  // 24 boundary pixels matched both ways plus one outlier: 49 distances, rank 47 is still 0
  const auto s = *hausdorff(pred, truth, kN, kN);
  EXPECT_EQ(s.hd95, 0.0);
  const double outlier = std::sqrt(12.0 * 12.0 + 4.0 * 4.0);
  EXPECT_EQ(s.maximum, outlier);
  EXPECT_NEAR(s.average, outlier / 25.0, 1e-15);
}

TEST(Hausdorff, MatchesAllPairsOracle) {
  std::mt19937_64 rng(3);
  int compared = 0;
  for (int seed = 0; seed < 150; ++seed) {
    const auto p = tctest::random_mask(rng, kN, kN);
    const auto t = tctest::random_mask(rng, kN, kN);
    const auto bp = tctest::brute_boundary(p, kN, kN), bt = tctest::brute_boundary(t, kN, kN);
    EXPECT_EQ(boundary_pixels(p, kN, kN), bp);
    const auto s = hausdorff(p, t, kN, kN);
    if (bp.empty() || bt.empty()) {
      EXPECT_FALSE(s.has_value());
      continue;
    }
    ASSERT_TRUE(s.has_value());
    const auto want = tctest::brute_hausdorff(bp, bt);
    EXPECT_EQ(s->average, want.average);
    EXPECT_EQ(s->hd95, want.hd95);
    EXPECT_EQ(s->maximum, want.maximum);
    EXPECT_LE(s->hd95, s->maximum);
    EXPECT_EQ(*average_hausdorff(t, p, kN, kN), s->average);
    ++compared;
  }
  EXPECT_GE(compared, 100);
}

TEST(EvalReport, PerfectPredictionAndConstantBackground) {
  std::vector<Mask> truths;
  for (std::size_t i = 0; i < 3; ++i) {
    Mask m(kN * kN, 0);
    for (std::size_t y = 2; y < 8; ++y)
      for (std::size_t x = 2; x < 8; ++x) m[y * kN + x] = 1;
    for (std::size_t y = 10; y < 13; ++y)
      for (std::size_t x = 9 + i; x < 13 + i; ++x) m[y * kN + x] = 2;
    truths.push_back(m);
  }
  const auto perfect = evaluate_masks(truths, truths, 4, kN, kN);
  ASSERT_EQ(perfect.rows.size(), 3u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(*perfect.rows[k].dice, 1.0);
    EXPECT_EQ(*perfect.rows[k].ahd, 0.0);
    EXPECT_EQ(*perfect.rows[k].hd95, 0.0);
  }
  EXPECT_FALSE(perfect.rows[2].dice.has_value());
  EXPECT_EQ(perfect.dice_classes, 2u);
  EXPECT_EQ(*perfect.mean_dice, 1.0);

  const std::vector<Mask> background(3, Mask(kN * kN, 0));
  const auto bg = evaluate_masks(background, truths, 4, kN, kN);
  EXPECT_EQ(*bg.rows[0].dice, 0.0);
  EXPECT_FALSE(bg.rows[0].ahd.has_value());
  EXPECT_FALSE(bg.mean_ahd.has_value());
  EXPECT_NE(bg.to_csv().find("class_1,0.000000,n/a,n/a"), std::string::npos) << bg.to_csv();
}

TEST(EvalReport, CsvMeanIsMeanOfDefinedRows) {
  std::mt19937_64 rng(5);
  std::vector<Mask> preds, truths;
  for (int i = 0; i < 6; ++i) {
    Mask p(kN * kN), t(kN * kN);
    for (auto& v : p) v = static_cast<std::uint8_t>(rng() % 3);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 3);
    preds.push_back(p);
    truths.push_back(t);
  }
  const auto r = evaluate_masks(preds, truths, 4, kN, kN);
  const auto csv = r.to_csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "class,dice,ahd,hd95");
  double total = 0;
  int defined = 0;
  std::string mean_field;
  while (std::getline(in, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const auto label = line.substr(0, c1), dice = line.substr(c1 + 1, c2 - c1 - 1);
    if (label == "mean") {
      mean_field = dice;
    } else if (dice != "n/a") {
      total += std::stod(dice);
      ++defined;
    }
  }
  EXPECT_EQ(defined, 2);
  EXPECT_NEAR(std::stod(mean_field), total / defined, 1e-6);
  EXPECT_NE(csv.find("class_3,n/a,n/a,n/a"), std::string::npos);
}

TEST(EvalReport, TextSummaryFollowsTableOrder) {
  const std::vector<Mask> t{with_pixels(4, 4, {{1, 1}, {1, 2}})};
  const auto text = evaluate_masks(t, t, 2, 4, 4).to_text();
  const auto summary = text.find("DSC");
  ASSERT_NE(summary, std::string::npos);
  EXPECT_LT(summary, text.find("HD", summary));
  EXPECT_LT(text.find("HD", summary), text.find("class_1", summary));
}

TEST(EvalReport, InvariantToSampleOrder) {
  std::mt19937_64 rng(6);
  std::vector<Mask> preds, truths;
  for (int i = 0; i < 8; ++i) {
    preds.push_back(tctest::random_mask(rng, kN, kN));
    truths.push_back(tctest::random_mask(rng, kN, kN));
  }
  const auto a = evaluate_masks(preds, truths, 2, kN, kN);
  std::reverse(preds.begin(), preds.end());
  std::reverse(truths.begin(), truths.end());
  const auto b = evaluate_masks(preds, truths, 2, kN, kN);
  ASSERT_EQ(a.mean_dice.has_value(), b.mean_dice.has_value());
  EXPECT_NEAR(*a.mean_dice, *b.mean_dice, 1e-12);
  EXPECT_NEAR(*a.mean_ahd, *b.mean_ahd, 1e-12);
  EXPECT_NEAR(*a.mean_hd95, *b.mean_hd95, 1e-12);
}

TEST(Argmax, PicksLargestLogitFirstOnTies) {
  // B=1, K=3, 1x3 pixels
  const Tensor<float> logits({1, 3, 1, 3}, {0, 5, 1, 2, 5, 1, 1, 0, 1});
  EXPECT_EQ(argmax_classes(logits), (Mask{1, 0, 0}));
}

TEST(Evaluate, ModelPredictionsAreDeterministicAndBounded) {
  auto c = tctest::tiny_config();
  TransClawUNet<float> net(c, 7);
  PhantomOptions o;
  o.count = 3;
  o.classes = 3;
  o.height = o.width = 16;
  const auto samples = generate_samples(o);
  const auto a = predict_masks(net, samples, 2);
  const auto b = predict_masks(net, samples, 3);
  EXPECT_EQ(a, b);
  for (const auto& m : a)
    for (auto v : m) EXPECT_LT(v, 3);
  const auto r1 = evaluate(net, samples, 2);
  const auto r2 = evaluate(net, samples, 2);
  EXPECT_EQ(r1.to_csv(), r2.to_csv());
  EXPECT_EQ(r1.samples, 3u);
}
