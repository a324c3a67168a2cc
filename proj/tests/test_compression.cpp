#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "siamlite/compression.hpp"
#include "siamlite/flops.hpp"
#include "siamlite/sequence.hpp"

using namespace siamlite;

namespace {

/// Desk model with random nonzero biases so bias folding is exercised.
Model biased_model(std::uint64_t seed) {
  Model m;
  m.spec = build_default_spec(ModelScale::kDesk);
  m.weights = init_weights(m.spec, seed);
  Rng rng(seed + 1000);
  for (auto& layer : m.weights.layers)
    for (auto& conv : layer.convs)
      for (auto& v : conv.bias.data()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  return m;
}

std::vector<PatchPair> random_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({oracle::random_tensor<float>(rng, {1, 3, 32, 32}, 0, 1),
                   oracle::random_tensor<float>(rng, {1, 3, 64, 64}, 0, 1)});
  }
  return out;
}

double max_head_diff(const Model& a, const Model& b, const std::vector<PatchPair>& pairs) {
  double worst = 0;
  for (const auto& p : pairs) {
    const HeadMaps x = model_forward(a.spec, a.weights, p.template_patch, p.search_patch);
    const HeadMaps y = model_forward(b.spec, b.weights, p.template_patch, p.search_patch);
    worst = std::max({worst, max_abs_diff(x.cls, y.cls), max_abs_diff(x.reg, y.reg)});
  }
  return worst;
}

}  // namespace

TEST(RankFilters, L1PerOutputFilter) {
  Tensor w(Shape{2, 1, 1, 3}, std::vector<float>{1, -2, 3, 0, 0.5f, -0.5f});
  EXPECT_EQ(rank_filters(w), (std::vector<double>{6, 1}));
}

TEST(PrunableUnits, DeskBackboneOnly) {
  const auto units = prunable_units(build_default_spec(ModelScale::kDesk));
  ASSERT_EQ(units.size(), 3u);
  EXPECT_EQ(units[0].layer, 0u);
  EXPECT_EQ(units[0].kind, PrunableUnit::Kind::kLayerOutput);
  EXPECT_EQ(units[0].channels, 8u);
  EXPECT_EQ(units[1].layer, 2u);
  EXPECT_EQ(units[1].kind, PrunableUnit::Kind::kHidden);
  EXPECT_EQ(units[2].layer, 3u);
  EXPECT_EQ(units[2].channels, 32u);
}

TEST(PruneFilters, FractionZeroIsBitExactNoOp) {
  const Model m = biased_model(1);
  const PruneResult r = prune_filters(m, 0.0);
  EXPECT_EQ(r.model, m);
  for (const auto& l : r.report.layers) EXPECT_EQ(l.kept.size(), l.original);
}

TEST(PruneFilters, ZeroedFiltersVanishWithoutChangingOutputs) {
  Model m = biased_model(2);
  // Zero the first quarter of every prunable unit's filters, weights and bias.
  for (const auto& u : prunable_units(m.spec)) {
    auto& convs = m.weights.layers[u.layer].convs;
    ConvParams& p = u.kind == PrunableUnit::Kind::kHidden ? convs[0] : convs.back();
    const std::size_t per = p.weight.size() / u.channels;
    for (std::size_t c = 0; c < u.channels / 4; ++c) {
      for (std::size_t e = 0; e < per; ++e) p.weight[c * per + e] = 0.0f;
      p.bias[c] = 0.0f;
    }
  }
  const PruneResult r = prune_filters(m, 0.25);
  for (const auto& l : r.report.layers) {
    for (std::size_t k = 0; k < l.kept.size(); ++k) EXPECT_GE(l.kept[k], l.original / 4);
  }
  EXPECT_LT(max_head_diff(m, r.model, random_pairs(5, 3)), 1e-6);
}

TEST(PruneFilters, InteriorConstantsFoldIntoConsumerBias) {
  // A filter with zero weights but a nonzero bias emits a constant. Through a
  // 1x1 consumer the fold is exact.
  Model m = biased_model(4);
  auto& stem = m.weights.layers[0].convs[0];
  const std::size_t per = stem.weight.size() / 8;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t e = 0; e < per; ++e) stem.weight[c * per + e] = 0.0f;
  const PruneResult r = prune_filters(m, 0.25, {prunable_units(m.spec)[0]});
  EXPECT_EQ(r.model.spec.layers[0].out_channels, 6u);
  EXPECT_LT(max_head_diff(m, r.model, random_pairs(3, 5)), 1e-5);
}

TEST(PruneFilters, ShrinksSpecAndFlops) {
  const Model m = biased_model(6);
  const PruneResult r = prune_filters(m, 0.25);
  EXPECT_EQ(r.model.spec.layers[0].out_channels, 6u);
  EXPECT_EQ(r.model.spec.layers[2].in_channels, 6u);
  EXPECT_EQ(r.model.spec.layers[2].hidden_channels, 24u);
  EXPECT_EQ(r.model.spec.layers[3].hidden_channels, 24u);
  EXPECT_TRUE(r.model.spec.layers[3].has_skip());
  EXPECT_EQ(r.model.spec.feature_channels(), 8u);
  const double before = static_cast<double>(count_flops(m.spec).total);
  const double after = static_cast<double>(count_flops(r.model.spec).total);
  EXPECT_LE(after, 0.8 * before);
}

TEST(PruneFilters, RejectsBadFractionAndUnits) {
  const Model m = biased_model(7);
  EXPECT_THROW(prune_filters(m, 1.0), ValueError);
  EXPECT_THROW(prune_filters(m, -0.1), ValueError);
  EXPECT_THROW(prune_filters(m, 0.25, {PrunableUnit{5, PrunableUnit::Kind::kLayerOutput, 8}}),
               ValueError);
}

TEST(PruneFilters, TiesBreakTowardLowerIndex) {
  Model m = biased_model(8);
  auto& stem = m.weights.layers[0].convs[0];
  for (auto& v : stem.weight.data()) v = 1.0f;
  const PruneResult r = prune_filters(m, 0.25, {prunable_units(m.spec)[0]});
  EXPECT_EQ(r.report.layers[0].kept, (std::vector<std::size_t>{2, 3, 4, 5, 6, 7}));
}

TEST(QuantParams, ClosedFormRanges) {
  const QuantParams a = quant_params_for_range(0.0, 2.55, 8);
  EXPECT_NEAR(a.scale, 0.01, 1e-8);
  EXPECT_EQ(a.zero_point, 0);
  const QuantParams b = quant_params_for_range(-1.0, 1.0, 8);
  EXPECT_NEAR(b.scale, 2.0 / 255.0, 1e-8);
  EXPECT_EQ(b.zero_point, 127);  // the float scale sits just above 2/255
  const QuantParams c = quant_params_for_range(0.5, 3.0, 8);  // widened to include 0
  EXPECT_EQ(c.zero_point, 0);
  EXPECT_EQ(c.dequantize(c.quantize(0.0)), 0.0);
  const QuantParams d = quant_params_for_range(0.5, 0.5, 8);
  EXPECT_NEAR(d.scale, 1.0 / 255.0, 1e-8);
  const QuantParams e = quant_params_for_range(-3.0, -1.0, 16);
  EXPECT_EQ(e.qmax(), 65535);
  EXPECT_EQ(e.zero_point, 65535);
  EXPECT_THROW(quant_params_for_range(0, 1, 4), ValueError);
  EXPECT_THROW(quant_params_for_range(1, 0, 8), ValueError);
}

TEST(QuantParams, RoundTripWithinHalfStepOverTheRange) {
  Rng rng(9);
  for (int bits : {8, 16}) {
    for (int trial = 0; trial < 200; ++trial) {
      double lo = rng.uniform(-5, 5), hi = rng.uniform(-5, 5);
      if (lo > hi) std::swap(lo, hi);
      const QuantParams p = quant_params_for_range(lo, hi, bits);
      for (int k = 0; k <= 100; ++k) {
        const double x = std::min(0.0, lo) + (std::max(0.0, hi) - std::min(0.0, lo)) * k / 100.0;
        ASSERT_LE(std::abs(p.fake_quantize(x) - x), p.scale / 2) << lo << " " << hi << " " << x;
      }
    }
  }
}

TEST(QuantParams, ClampsOutsideRange) {
  const QuantParams p = quant_params_for_range(-1.0, 1.0, 8);
  EXPECT_EQ(p.quantize(100.0), 255u);
  EXPECT_EQ(p.quantize(-100.0), 0u);
}

TEST(Calibrate, FusedRelu6TapsAndCoverage) {
  const Model m = biased_model(10);
  EXPECT_TRUE(feeds_relu6(m.spec, {0, TapId::kOutput}));
  EXPECT_FALSE(feeds_relu6(m.spec, {2, TapId::kOutput}));
  EXPECT_TRUE(feeds_relu6(m.spec, {5, TapId::kOutput}));
  EXPECT_FALSE(feeds_relu6(m.spec, {TapId::kCorrelation, TapId::kOutput}));
  const auto taps = activation_taps(m.spec);
  EXPECT_TRUE(std::is_sorted(taps.begin(), taps.end()));
  EXPECT_EQ(taps.front(), (TapId{TapId::kCorrelation, TapId::kOutput}));
  const QuantPlan plan = calibrate(m, random_pairs(4, 11), 8);
  EXPECT_EQ(plan.activations.size(), taps.size());
  // Fused taps never see values outside [0, 6].
  const QuantParams& stem = plan.activations.at({0, TapId::kOutput});
  EXPECT_GE(stem.dequantize(0), -stem.scale);
  EXPECT_LE(stem.dequantize(255), 6.0 + stem.scale);
  EXPECT_THROW(calibrate(m, {}, 8), ValueError);
}

TEST(QuantizeNetwork, WeightsWithinHalfStepAndForwardClose) {
  const Model m = biased_model(12);
  const auto calib = random_pairs(4, 13);
  for (int bits : {8, 16}) {
    const QuantizedNetwork q = quantize_network(m, calibrate(m, calib, bits));
    q.validate();
    const Weights dq = q.dequantized_weights();
    for (std::size_t i = 0; i < m.weights.layers.size(); ++i)
      for (std::size_t k = 0; k < m.weights.layers[i].convs.size(); ++k) {
        const double half = q.layers[i][k].params.scale / 2;
        const Tensor& w = m.weights.layers[i].convs[k].weight;
        for (std::size_t e = 0; e < w.size(); ++e)
          ASSERT_LE(std::abs(double(dq.layers[i].convs[k].weight[e]) - w[e]), half + 1e-7);
      }
    const auto& p = calib[0];
    const HeadMaps f = model_forward(m.spec, m.weights, p.template_patch, p.search_patch);
    const HeadMaps g = quantized_forward(q, p.template_patch, p.search_patch);
    const double tol = bits == 16 ? 1e-2 : 0.5;
    EXPECT_LT(max_abs_diff(f.cls, g.cls), tol) << bits;
  }
}

TEST(QuantizedModel, TrackerInterfaceMatchesSimulatedForward) {
  const Model m = biased_model(14);
  const auto calib = random_pairs(2, 15);
  QuantizedNetwork q = quantize_network(m, calibrate(m, calib, 8));
  const HeadMaps direct = quantized_forward(q, calib[1].template_patch, calib[1].search_patch);
  const QuantizedModel qm(std::move(q));
  const HeadMaps via = qm.respond(qm.embed(calib[1].template_patch), calib[1].search_patch);
  EXPECT_EQ(direct.cls, via.cls);
  EXPECT_EQ(direct.reg, via.reg);
}
