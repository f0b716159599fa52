#include <gtest/gtest.h>

#include "auxseg/core.hpp"
#include "oracles.hpp"

using namespace auxseg;

TEST(DiceScore, IdentityIsOne) {
  torch::manual_seed(0);
  const auto gt = (torch::rand({8, 8}) > 0.5).to(torch::kFloat32);
  for (double thr : {0.1, 0.5, 0.9}) EXPECT_DOUBLE_EQ(dice_score(gt, gt, thr), 1.0);
}

TEST(DiceScore, AllOnesAgainstEightForegroundPixels) {
  auto gt = torch::zeros({4, 4});
  gt.view(-1).slice(0, 0, 8).fill_(1.0);
  EXPECT_NEAR(dice_score(torch::ones({4, 4}), gt), 2.0 / 3.0, 1e-12);
}

TEST(DiceScore, BothEmptyScoresOne) {
  EXPECT_DOUBLE_EQ(dice_score(torch::zeros({4, 4}), torch::zeros({4, 4})), 1.0);
}

TEST(DiceScore, SymmetricAfterThresholding) {
  torch::manual_seed(1);
  for (int i = 0; i < 20; ++i) {
    const auto a = (torch::rand({6, 6}) > 0.5).to(torch::kFloat32);
    const auto b = (torch::rand({6, 6}) > 0.5).to(torch::kFloat32);
    EXPECT_DOUBLE_EQ(dice_score(a, b), dice_score(b, a));
  }
}

TEST(DiceScore, ShapeMismatchNamesBothShapes) {
  try {
    dice_score(torch::zeros({4, 4}), torch::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("4x4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(MeanDiceScore, AveragesPerSample) {
  auto preds = torch::zeros({2, 1, 4, 4});
  auto gts = torch::zeros({2, 1, 4, 4});
  preds[0].fill_(1.0);
  gts[0].fill_(1.0);  // sample 0: perfect; sample 1: both empty
  gts[1][0][0][0] = 1.0;  // now sample 1 scores 0
  EXPECT_DOUBLE_EQ(mean_dice_score(preds, gts), 0.5);
}

TEST(SoftDiceLoss, ClosedForms) {
  EXPECT_DOUBLE_EQ(soft_dice_loss(torch::ones({4, 4}), torch::ones({4, 4})).item<double>(), 0.0);
  EXPECT_NEAR(soft_dice_loss(torch::zeros({4, 4}), torch::ones({4, 4})).item<double>(), 1.0 - 1.0 / 17.0, 1e-7);
}

TEST(SoftDiceLoss, MatchesScalarOracle) {
  torch::manual_seed(2);
  for (int i = 0; i < 10; ++i) {
    const auto p = torch::rand({8, 8}, torch::kFloat64);
    const auto t = torch::rand({8, 8}, torch::kFloat64);
    EXPECT_NEAR(soft_dice_loss(p, t).item<double>(), oracle::soft_dice(oracle::flat(p), oracle::flat(t), 1.0), 1e-12);
  }
}

TEST(SoftDiceLoss, BatchIsMeanOfSamples) {
  torch::manual_seed(3);
  const auto p = torch::rand({3, 1, 5, 5}, torch::kFloat64);
  const auto t = torch::rand({3, 1, 5, 5}, torch::kFloat64);
  double expect = 0;
  for (int i = 0; i < 3; ++i) expect += oracle::soft_dice(oracle::flat(p[i]), oracle::flat(t[i]), 1.0) / 3.0;
  EXPECT_NEAR(soft_dice_loss(p, t).item<double>(), expect, 1e-12);
}

TEST(SoftDiceLoss, SelfLossClosedForm) {
  torch::manual_seed(4);
  for (int n : {4, 8, 16}) {
    const auto p = torch::rand({n, n}, torch::kFloat64);
    const double s1 = p.sum().item<double>(), s2 = (p * p).sum().item<double>();
    EXPECT_NEAR(soft_dice_loss(p, p).item<double>(), 1.0 - (2.0 * s2 + 1.0) / (2.0 * s1 + 1.0), 1e-12);
    const auto b = (p > 0.5).to(torch::kFloat64);
    EXPECT_NEAR(soft_dice_loss(b, b).item<double>(), 0.0, 1e-15);
  }
}

TEST(SoftDiceLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(5);
  const auto t = torch::rand({4, 4}, torch::kFloat64);
  auto p = torch::rand({4, 4}, torch::kFloat64).requires_grad_(true);
  soft_dice_loss(p, t).backward();
  const auto numeric =
      oracle::numeric_grad([&](const torch::Tensor& x) { return oracle::soft_dice(oracle::flat(x), oracle::flat(t), 1.0); },
                           p.detach());
  EXPECT_LT(oracle::max_rel_error(p.grad(), numeric, 1e-8), 1e-4);
}

TEST(SoftDiceLoss, ShapeMismatchThrows) {
  EXPECT_THROW(soft_dice_loss(torch::zeros({4, 4}), torch::zeros({5, 4})), ShapeError);
}

TEST(EnsembleAverage, MidpointAndIdempotence) {
  std::vector<ProbabilityMap> two{torch::zeros({3, 3}), torch::ones({3, 3})};
  EXPECT_TRUE(torch::equal(ensemble_average(two), torch::full({3, 3}, 0.5)));
  torch::manual_seed(6);
  const auto m = torch::rand({8, 8});
  std::vector<ProbabilityMap> same(4, m);
  EXPECT_TRUE(torch::equal(ensemble_average(same), m));
}

TEST(EnsembleAverage, MatchesScalarMeanAndIgnoresOrder) {
  torch::manual_seed(7);
  std::vector<ProbabilityMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(torch::rand({8, 8}));
  const auto avg = oracle::flat(ensemble_average(maps));
  for (size_t e = 0; e < 64; ++e) {
    double s = 0;
    for (const auto& m : maps) s += oracle::flat(m)[e];
    EXPECT_NEAR(avg[e], s / 5.0, 1e-7);
  }
  auto reversed = maps;
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_TRUE(torch::equal(ensemble_average(maps), ensemble_average(reversed)));
}

TEST(EnsembleAverage, Errors) {
  EXPECT_THROW(ensemble_average({}), std::invalid_argument);
  std::vector<ProbabilityMap> bad{torch::zeros({2, 2}), torch::zeros({3, 3})};
  EXPECT_THROW(ensemble_average(bad), ShapeError);
}

TEST(Sample, ValidationCatchesBrokenInvariants) {
  Sample ok{"a", torch::full({4, 4}, 0.5), torch::zeros({4, 4})};
  EXPECT_NO_THROW(validate_sample(ok));
  Sample shape{"b", torch::zeros({4, 4}), torch::zeros({4, 5})};
  EXPECT_THROW(validate_sample(shape), std::invalid_argument);
  Sample range{"c", torch::full({4, 4}, 1.5), std::nullopt};
  EXPECT_THROW(validate_sample(range), std::invalid_argument);
  Sample nonbinary{"d", torch::zeros({4, 4}), torch::full({4, 4}, 0.5)};
  EXPECT_THROW(validate_sample(nonbinary), std::invalid_argument);
}
