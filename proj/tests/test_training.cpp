#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "siamlite/sequence.hpp"
#include "siamlite/tracker.hpp"
#include "siamlite/training.hpp"

using namespace siamlite;

namespace {

std::vector<Sequence> small_set(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    SynthParams p;
    p.texture_seed = seed * 100 + i;
    out.push_back(synth_sequence(p, 12, rng));
  }
  return out;
}

Model desk_model(std::uint64_t seed) {
  Model m;
  m.spec = build_default_spec(ModelScale::kDesk);
  m.weights = init_weights(m.spec, seed);
  return m;
}

}  // namespace

TEST(MakeLabels, RingCountsAroundCenteredTarget) {
  const ResponseGeometry g = response_geometry(build_default_spec(ModelScale::kDesk));
  const BBox gt{32, 32, 16, 16};
  const LabelMaps m = make_labels(gt, gt, g, 1);
  EXPECT_TRUE(m.target_in_crop);
  EXPECT_EQ(m.positives(), 9u);
  std::size_t ignored = 0;
  for (auto c : m.cells) ignored += c == CellLabel::kIgnore;
  EXPECT_EQ(ignored, 25u - 9u);
  EXPECT_EQ(m.cells[4 * 9 + 4], CellLabel::kPositive);
  EXPECT_EQ(m.cls_weights.at(0, 0, 2, 4), 0.0f);
  EXPECT_EQ(m.cls_weights.at(0, 0, 0, 0), 1.0f);
  // Same size as the prior: zero log-scale targets, and the centre cell has zero offset.
  EXPECT_EQ(m.reg_targets.at(0, 2, 4, 4), 0.0f);
  EXPECT_EQ(m.reg_targets.at(0, 0, 4, 4), 0.0f);
  // One cell right of the target: offset of minus one stride.
  EXPECT_FLOAT_EQ(m.reg_targets.at(0, 0, 4, 5), -1.0f);
}

TEST(MakeLabels, TargetOutsideCropIsAllNegative) {
  const ResponseGeometry g = response_geometry(build_default_spec(ModelScale::kDesk));
  const LabelMaps m = make_labels(BBox{-5, 30, 10, 10}, BBox{32, 32, 10, 10}, g, 2);
  EXPECT_FALSE(m.target_in_crop);
  EXPECT_EQ(m.positives(), 0u);
  for (float v : m.cls_weights.vector()) EXPECT_EQ(v, 1.0f);
}

TEST(MakeLabels, EncodeDecodeRoundTrip) {
  const NetworkSpec spec = build_default_spec(ModelScale::kDesk);
  const ResponseGeometry g = response_geometry(spec);
  const TrackerConfig config;
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const BBox prior{rng.uniform(40, 90), rng.uniform(40, 90), rng.uniform(15, 35),
                     rng.uniform(15, 35)};
    const double side = config.context_factor * std::max(prior.w, prior.h);
    const BBox gt{prior.cx + rng.uniform(-0.3, 0.3) * side, prior.cy + rng.uniform(-0.3, 0.3) * side,
                  prior.w * rng.uniform(0.8, 1.2), prior.h * rng.uniform(0.8, 1.2)};
    // Frame -> search patch: origin at the crop corner, 64 / side px per frame px.
    const double k = 64.0 / side;
    const BBox gt_s{(gt.cx - prior.cx) * k + 32, (gt.cy - prior.cy) * k + 32, gt.w * k, gt.h * k};
    const BBox prior_s{32, 32, prior.w * k, prior.h * k};
    const LabelMaps m = make_labels(gt_s, prior_s, g, 2);
    ASSERT_GT(m.positives(), 0u);
    const TrackerState state{Tensor(), prior, Tensor()};
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t c = 0; c < 9; ++c) {
        if (m.cells[r * 9 + c] != CellLabel::kPositive) continue;
        const BBox d = decode_bbox({r, c}, m.reg_targets, state, config, g);
        EXPECT_NEAR(d.cx, gt.cx, 1e-4);
        EXPECT_NEAR(d.cy, gt.cy, 1e-4);
        EXPECT_NEAR(d.w, gt.w, 1e-4);
        EXPECT_NEAR(d.h, gt.h, 1e-4);
      }
  }
}

TEST(Loss, ZeroLogitsClosedForm) {
  const ResponseGeometry g = response_geometry(build_default_spec(ModelScale::kDesk));
  const BBox gt{32, 32, 16, 16};
  const LabelMaps m = make_labels(gt, BBox{32, 32, 8, 16}, g, 1);
  const LossTerms t = loss(Tensor(Shape{1, 1, 9, 9}), Tensor(Shape{1, 4, 9, 9}), m, 2.0);
  EXPECT_NEAR(t.cls, std::log(2.0), 1e-6);
  // Positives are the 3x3 block; targets dx, dy in {-1, 0, 1}, dlogw = ln 2, dlogh = 0.
  double reg = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      reg += smooth_l1_value<double>(-dx) + smooth_l1_value<double>(-dy) +
             smooth_l1_value(std::log(2.0));
  reg /= 36.0;
  EXPECT_NEAR(t.reg, reg, 1e-6);
  EXPECT_NEAR(t.total, t.cls + 2.0 * t.reg, 1e-6);
}

TEST(Distill, MeanSquaredErrorAndAlignment) {
  Tensor s(Shape{1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  Tensor t(Shape{1, 1, 2, 2}, std::vector<float>{1, 1, 1, 1});
  EXPECT_NEAR(distill_loss(s, t), (1 + 0 + 1 + 4) / 4.0, 1e-7);
  EXPECT_EQ(align_response(t, 2), t);
  EXPECT_EQ(align_response(Tensor(Shape{1, 1, 5, 5}, 2.0f), 3).shape(), (Shape{1, 1, 3, 3}));
}

TEST(SgdStep, SubtractsScaledGradient) {
  const Model m = desk_model(1);
  const Weights g = init_weights(m.spec, 2);
  const Weights w = sgd_step(m.weights, g, 0.5);
  EXPECT_EQ(w.layers[0].convs[0].weight[3],
            m.weights.layers[0].convs[0].weight[3] - 0.5f * g.layers[0].convs[0].weight[3]);
  Weights bad = g;
  bad.layers.pop_back();
  EXPECT_THROW(sgd_step(m.weights, bad, 0.1), ShapeError);
}

TEST(PairGradients, LargestCoordinateOfEveryConvMatchesFiniteDifference) {
  const auto seqs = small_set(1, 3);
  const Model m = desk_model(4);
  Rng rng(5);
  const PairSample pair = sample_pair(seqs[0], m.spec, rng);
  TrainConfig config;
  const PairGradients pg = pair_gradients(m, pair, config, nullptr);
  // Head layers see the raw response, so the kink-free step is much shorter
  // there than in the backbone; the closest of three steps is compared.
  for (std::size_t i = 0; i < m.weights.layers.size(); ++i) {
    for (std::size_t k = 0; k < m.weights.layers[i].convs.size(); ++k) {
      const auto& g = pg.grads.layers[i].convs[k].weight;
      std::size_t best = 0;
      for (std::size_t e = 0; e < g.size(); ++e)
        if (std::abs(g[e]) > std::abs(g[best])) best = e;
      auto total_at = [&](double t) {
        Model probe = m;
        probe.weights.layers[i].convs[k].weight[best] += static_cast<float>(t);
        return pair_gradients(probe, pair, config, nullptr).terms.total;
      };
      double closest = 1e30;
      for (double h : {1e-2, 1e-3, 1e-4})
        closest = std::min(closest, std::abs((total_at(h) - total_at(-h)) / (2 * h) - g[best]));
      EXPECT_LE(closest, 0.05 * std::abs(g[best]) + 1e-5) << "layer " << i << " conv " << k;
    }
  }
}

TEST(PairGradients, ZeroKdWeightLeavesGradientsUntouched) {
  const auto seqs = small_set(1, 6);
  const Model m = desk_model(7);
  Rng rng(8);
  const PairSample pair = sample_pair(seqs[0], m.spec, rng);
  const Tensor teacher(Shape{1, 1, 9, 9}, 3.0f);
  TrainConfig config;
  config.kd_weight = 0.0;
  const PairGradients with = pair_gradients(m, pair, config, &teacher);
  const PairGradients without = pair_gradients(m, pair, config, nullptr);
  EXPECT_EQ(with.grads, without.grads);
  EXPECT_EQ(with.terms.kd, 0.0);
  config.kd_weight = 0.5;
  const PairGradients active = pair_gradients(m, pair, config, &teacher);
  EXPECT_GT(active.terms.kd, 0.0);
  EXPECT_NE(active.grads, without.grads);
}

TEST(SamplePair, UnaugmentedSearchCentresTheTarget) {
  const auto seqs = small_set(1, 9);
  const NetworkSpec spec = build_default_spec(ModelScale::kDesk);
  Rng rng(10);
  SampleConfig sc;
  sc.augment = false;
  const PairSample p = sample_pair(seqs[0], spec, rng, sc);
  EXPECT_EQ(p.template_patch.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(p.search_patch.shape(), (Shape{1, 3, 64, 64}));
  EXPECT_NEAR(p.gt_in_search.cx, 32, 1e-9);
  EXPECT_NEAR(p.gt_in_search.cy, 32, 1e-9);
  EXPECT_NEAR(std::max(p.gt_in_search.w, p.gt_in_search.h), 32, 1e-9);
  EXPECT_NEAR(p.prior_in_search.cx, p.gt_in_search.cx, 1e-9);
  EXPECT_NEAR(p.prior_in_search.cy, p.gt_in_search.cy, 1e-9);
  EXPECT_NEAR(p.prior_in_search.w, p.gt_in_search.w, 1e-9);
  EXPECT_NEAR(p.prior_in_search.h, p.gt_in_search.h, 1e-9);
}

TEST(Train, DeterministicGivenSeedAndRecordsEveryStep) {
  const auto seqs = small_set(3, 12);
  TrainConfig config;
  config.steps = 4;
  config.batch_size = 2;
  const TrainResult a = train(desk_model(1), seqs, config);
  const TrainResult b = train(desk_model(1), seqs, config);
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.history.size(), 4u);
  EXPECT_EQ(a.history[3].step, 3u);
  EXPECT_NE(a.model, desk_model(1));
  config.rng_seed = 43;
  EXPECT_NE(train(desk_model(1), seqs, config).model, a.model);
  EXPECT_EQ(format_history(a.history).rfind("step,cls,reg,kd,total\n", 0), 0u);
}

TEST(Train, RejectsBadConfigAndMismatchedTeacher) {
  const auto seqs = small_set(1, 13);
  TrainConfig config;
  config.lr = 0;
  EXPECT_THROW(train(desk_model(1), seqs, config), ValueError);
  config = TrainConfig{};
  config.batch_size = 0;
  EXPECT_THROW(train(desk_model(1), seqs, config), ValueError);
  EXPECT_THROW(train(desk_model(1), {}, TrainConfig{}), ValueError);
  Model teacher;
  teacher.spec = build_default_spec(ModelScale::kPaper);
  teacher.weights = init_weights(teacher.spec, 1);
  config = TrainConfig{};
  config.steps = 1;
  config.kd_weight = 0.5;
  EXPECT_THROW(train(desk_model(1), seqs, config, &teacher), ShapeError);
}

TEST(Train, ClippedStepNormIsBounded) {
  const auto seqs = small_set(2, 15);
  const Model start = desk_model(2);
  TrainConfig config;
  config.steps = 1;
  config.lr = 0.5;
  config.clip_norm = 1e-3;
  const Model after = train(start, seqs, config).model;
  double sq = 0;
  for (std::size_t i = 0; i < start.weights.layers.size(); ++i)
    for (std::size_t k = 0; k < start.weights.layers[i].convs.size(); ++k) {
      const auto& a = start.weights.layers[i].convs[k];
      const auto& b = after.weights.layers[i].convs[k];
      for (std::size_t e = 0; e < a.weight.size(); ++e) sq += std::pow(double(b.weight[e]) - a.weight[e], 2);
      for (std::size_t e = 0; e < a.bias.size(); ++e) sq += std::pow(double(b.bias[e]) - a.bias[e], 2);
    }
  EXPECT_GT(sq, 0.0);
  EXPECT_LE(std::sqrt(sq), 0.5 * 1e-3 * (1 + 1e-3));
  config.clip_norm = -1;
  EXPECT_THROW(train(start, seqs, config), ValueError);
}

TEST(Train, DivergenceCarriesPartialHistory) {
  const auto seqs = small_set(2, 14);
  TrainConfig config;
  config.steps = 50;
  config.lr = 1e6;
  config.batch_size = 1;
  config.clip_norm = 0.0;
  try {
    train(desk_model(1), seqs, config);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_LT(e.partial().history.size(), 50u);
  }
}
