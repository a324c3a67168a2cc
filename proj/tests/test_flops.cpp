#include <gtest/gtest.h>

#include <numeric>

#include "siamlite/flops.hpp"

using namespace siamlite;

TEST(Flops, SinglePointwiseClosedForm) {
  // 1x1 conv, one channel in and out, 4x4 output: 2 * 16 MACs + 16 bias adds.
  EXPECT_EQ(dense_conv_flops(1, 1, 1, 4, 4), 48u);
  EXPECT_EQ(dense_conv_flops(1, 1, 1, 4, 4, false), 32u);
}

TEST(Flops, DenseAndDepthwiseClosedForms) {
  EXPECT_EQ(dense_conv_flops(3, 8, 3, 16, 16), 2u * 3 * 9 * 8 * 256 + 8 * 256);
  EXPECT_EQ(depthwise_conv_flops(32, 3, 8, 8), 2u * 32 * 9 * 64 + 32 * 64);
}

TEST(Flops, PruningQuarterOfFiltersCutsLayerByQuarter) {
  const std::uint64_t full = dense_conv_flops(6, 8, 3, 10, 10);
  const std::uint64_t pruned = dense_conv_flops(6, 6, 3, 10, 10);
  EXPECT_EQ(4 * pruned, 3 * full);
}

TEST(Flops, DeskTotalMatchesHandCount) {
  // Template 32 and search 64 through the stride-2 stem and first block:
  // extents 16/32 after the stem, 8/16 after the blocks, response 9x9.
  const std::uint64_t stem = (2 * 3 * 9 * 8 + 8) * (16 * 16 + 32 * 32);
  const std::uint64_t block1 = (2 * 8 * 32 + 32) * (16 * 16 + 32 * 32) +  // expand
                               (2 * 32 * 9 + 32) * (8 * 8 + 16 * 16) +    // depthwise s2
                               (2 * 32 * 8 + 8) * (8 * 8 + 16 * 16);      // project
  const std::uint64_t block2 = (2 * 8 * 32 + 32) * (8 * 8 + 16 * 16) +
                               (2 * 32 * 9 + 32) * (8 * 8 + 16 * 16) +
                               (2 * 32 * 8 + 8) * (8 * 8 + 16 * 16);
  const std::uint64_t xcorr = 2 * 8 * 8 * 8 * 81;
  const std::uint64_t head_common = (2 * 9 + 1) * 81 + (2 * 8 + 8) * 81 + (2 * 8 * 9 + 8) * 81;
  const std::uint64_t cls = head_common + (2 * 8 + 1) * 81;
  const std::uint64_t reg = head_common + (2 * 8 * 4 + 4) * 81;
  const FlopsReport r = count_flops(build_default_spec(ModelScale::kDesk));
  EXPECT_EQ(r.total, stem + block1 + block2 + xcorr + cls + reg);
  EXPECT_EQ(r.parameters, parameter_count(build_default_spec(ModelScale::kDesk)));
}

TEST(Flops, PerLayerSumEqualsTotal) {
  for (ModelScale s : {ModelScale::kDesk, ModelScale::kPaper}) {
    const FlopsReport r = count_flops(build_default_spec(s));
    const std::uint64_t sum = std::accumulate(r.layers.begin(), r.layers.end(), std::uint64_t{0},
                                              [](std::uint64_t a, const LayerFlops& l) { return a + l.flops; });
    EXPECT_EQ(sum, r.total);
    EXPECT_EQ(r.layers.size(), build_default_spec(s).layers.size() + 1);
  }
}

TEST(Flops, DeskCheaperThanPaper) {
  EXPECT_LT(count_flops(build_default_spec(ModelScale::kDesk)).total,
            count_flops(build_default_spec(ModelScale::kPaper)).total);
}

TEST(Flops, InvalidSizesRejectedAndCsvShape) {
  const NetworkSpec spec = build_default_spec(ModelScale::kDesk);
  EXPECT_THROW(count_flops(spec, 64, 32), ShapeError);
  const std::string csv = count_flops(spec).csv();
  EXPECT_EQ(csv.rfind("layer_index,kind,flops,params\n0,dense-conv,", 0), 0u);
  EXPECT_NE(csv.find("\n-1,xcorr,82944,0\n"), std::string::npos);
  EXPECT_NE(csv.find("# total,"), std::string::npos);
}
