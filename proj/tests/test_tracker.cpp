#include <gtest/gtest.h>

#include <cmath>

#include "siamlite/tracker.hpp"

using namespace siamlite;

namespace {

/// Returns fixed head maps regardless of input.
class FixedModel final : public SiameseModel {
 public:
  explicit FixedModel(HeadMaps maps)
      : spec_(build_default_spec(ModelScale::kDesk)), maps_(std::move(maps)) {}
  const NetworkSpec& spec() const override { return spec_; }
  Tensor embed(const Tensor&) const override { return Tensor(Shape{1, 8, 8, 8}); }
  HeadMaps respond(const Tensor&, const Tensor&) const override { return maps_; }

 private:
  NetworkSpec spec_;
  HeadMaps maps_;
};

HeadMaps peak_at(std::size_t row, std::size_t col, float dx = 0, float dy = 0, float dlw = 0,
                 float dlh = 0) {
  HeadMaps m{Tensor(Shape{1, 1, 9, 9}, -5.0f), Tensor(Shape{1, 4, 9, 9})};
  m.cls.at(0, 0, row, col) = 5.0f;
  m.reg.at(0, 0, row, col) = dx;
  m.reg.at(0, 1, row, col) = dy;
  m.reg.at(0, 2, row, col) = dlw;
  m.reg.at(0, 3, row, col) = dlh;
  return m;
}

TrackerState state_at(const BBox& b) { return TrackerState{Tensor(), b, hann_window(9)}; }

}  // namespace

TEST(HannWindow, PeakAtCenterZeroOnRim) {
  const Tensor w = hann_window(9);
  EXPECT_FLOAT_EQ(w.at(0, 0, 4, 4), 1.0f);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_FLOAT_EQ(w.at(0, 0, 0, i), 0.0f);
    EXPECT_FLOAT_EQ(w.at(0, 0, i, 8), 0.0f);
    EXPECT_FLOAT_EQ(w.at(0, 0, 2, i), w.at(0, 0, 6, 8 - i));
  }
  EXPECT_FLOAT_EQ(w.at(0, 0, 2, 4), 0.5f);
}

TEST(ArgmaxCell, FirstMaximumInRowMajorOrder) {
  Tensor m(Shape{1, 1, 3, 3}, 0.0f);
  m.at(0, 0, 1, 2) = 2.0f;
  m.at(0, 0, 2, 0) = 2.0f;
  EXPECT_EQ(argmax_cell(m), (Cell{1, 2}));
}

TEST(PenalizedScore, EndpointsOfGamma) {
  Tensor cls(Shape{1, 1, 9, 9}, 0.0f);
  cls.at(0, 0, 0, 0) = 2.0f;
  const Tensor win = hann_window(9);
  const Tensor raw = penalized_score(cls, win, 0.0);
  EXPECT_FLOAT_EQ(raw.at(0, 0, 0, 0), static_cast<float>(1.0 / (1.0 + std::exp(-2.0))));
  EXPECT_EQ(penalized_score(cls, win, 1.0), win);
  EXPECT_THROW(penalized_score(Tensor(Shape{1, 1, 3, 3}), win, 0.3), ShapeError);
}

TEST(DecodeBbox, ZeroOffsetAtCenterKeepsBox) {
  const NetworkSpec spec = build_default_spec(ModelScale::kDesk);
  const BBox prev{50, 60, 20, 16};
  const BBox b = decode_bbox({4, 4}, Tensor(Shape{1, 4, 9, 9}), state_at(prev), {},
                             response_geometry(spec));
  EXPECT_EQ(b, prev);
}

TEST(DecodeBbox, CellShiftOffsetAndScaleClosedForm) {
  const NetworkSpec spec = build_default_spec(ModelScale::kDesk);
  const HeadMaps m = peak_at(4, 5, 0.5f, -0.25f, std::log(2.0f), 3.0f);
  const BBox prev{50, 60, 20, 16};
  const BBox b = decode_bbox({4, 5}, m.reg, state_at(prev), {}, response_geometry(spec));
  // Crop side 2 * 20 = 40 px maps onto 64 search px: 0.625 frame px per search px.
  // One cell right is 4 search px; dx 0.5 adds 2 more; dy -0.25 subtracts 1.
  EXPECT_NEAR(b.cx, 50 + 6 * 0.625, 1e-9);
  EXPECT_NEAR(b.cy, 60 - 1 * 0.625, 1e-9);
  EXPECT_NEAR(b.w, 40, 1e-5);
  EXPECT_NEAR(b.h, 16 * std::exp(1.0), 1e-9);  // log-scale clamped to 1
  EXPECT_THROW(decode_bbox({9, 0}, m.reg, state_at(prev), {}, response_geometry(spec)), ValueError);
}

TEST(TrackFrame, SizeSmoothingBlendsPreviousAndDecoded) {
  const FixedModel model(peak_at(4, 4, 0, 0, std::log(2.0f), 0));
  Image frame(128, 128);
  TrackerConfig config;
  const TrackerState s0 = init_tracker(model, frame, BBox{64, 64, 20, 20}, config);
  const TrackResult r = track_frame(s0, model, frame, config);
  EXPECT_NEAR(r.bbox.w, 0.7 * 20 + 0.3 * 40, 1e-5);
  EXPECT_NEAR(r.bbox.h, 20, 1e-9);
  EXPECT_EQ(r.state.bbox, r.bbox);
}

TEST(TrackFrame, WindowDominatesAtGammaOne) {
  const FixedModel model(peak_at(0, 0));
  Image frame(128, 128);
  TrackerConfig config;
  config.window_weight = 1.0;
  const TrackerState s0 = init_tracker(model, frame, BBox{64, 64, 20, 20}, config);
  EXPECT_EQ(track_frame(s0, model, frame, config).bbox, (BBox{64, 64, 20, 20}));
  config.window_weight = 0.0;
  const BBox moved = track_frame(s0, model, frame, config).bbox;
  EXPECT_NEAR(moved.cx, 64 - 16 * 40.0 / 64.0, 1e-9);
}

TEST(TrackFrame, OutputStaysInsideFrame) {
  const FixedModel model(peak_at(8, 8, 50.0f, 50.0f, 1.0f, 1.0f));
  Image frame(64, 48);
  TrackerConfig config;
  config.window_weight = 0.0;
  TrackerState s = init_tracker(model, frame, BBox{60, 44, 30, 30}, config);
  for (int i = 0; i < 5; ++i) {
    s = track_frame(s, model, frame, config).state;
    EXPECT_TRUE(s.bbox.valid());
    EXPECT_LE(s.bbox.cx, 64.0);
    EXPECT_LE(s.bbox.w, 64.0);
    EXPECT_LE(s.bbox.h, 48.0);
  }
}

TEST(SiameseTracker, RejectsUseBeforeInitAndBadConfig) {
  const FixedModel model(peak_at(4, 4));
  SiameseTracker t(model, {});
  EXPECT_THROW(t.update(Image(64, 64)), ValueError);
  TrackerConfig bad;
  bad.window_weight = 1.5;
  EXPECT_THROW(SiameseTracker(model, bad), ValueError);
  EXPECT_THROW(t.init(Image(64, 64), BBox{10, 10, 0, 5}), ValueError);
}
