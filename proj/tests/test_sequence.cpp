#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "siamlite/sequence.hpp"

using namespace siamlite;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("siamlite_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(Synth, StaticMotionKeepsBoxFixed) {
  SynthParams p;
  p.motion = Motion::kStatic;
  Rng rng(1);
  const Sequence s = synth_sequence(p, 10, rng);
  ASSERT_EQ(s.size(), 10u);
  for (const auto& b : s.gt) EXPECT_EQ(b, s.gt[0]);
}

TEST(Synth, LinearMotionTravelsExactDistance) {
  SynthParams p;
  p.width = p.height = 200;
  p.speed = 1.0;
  p.direction = 0.0;
  p.start = {{40.0, 100.0}};
  Rng rng(2);
  const Sequence s = synth_sequence(p, 50, rng);
  EXPECT_NEAR(s.gt[49].cx - s.gt[0].cx, 49.0, 1e-9);
  EXPECT_NEAR(s.gt[49].cy, s.gt[0].cy, 1e-9);
}

TEST(Synth, TargetStaysInsideFrame) {
  SynthParams p;
  p.speed = 4.0;
  Rng rng(3);
  for (Motion m : {Motion::kLinear, Motion::kRandomWalk}) {
    p.motion = m;
    const Sequence s = synth_sequence(p, 120, rng);
    for (const auto& b : s.gt) {
      EXPECT_GE(b.left(), 0.0);
      EXPECT_GE(b.top(), 0.0);
      EXPECT_LE(b.left() + b.w, 128.0);
      EXPECT_LE(b.top() + b.h, 128.0);
    }
  }
}

TEST(Synth, SameSeedSameSequence) {
  SynthParams p;
  p.occluder = true;
  Rng a(4), b(4), c(5);
  const Sequence x = synth_sequence(p, 8, a), y = synth_sequence(p, 8, b), z = synth_sequence(p, 8, c);
  EXPECT_EQ(x.frames, y.frames);
  EXPECT_EQ(x.gt, y.gt);
  EXPECT_NE(x.frames, z.frames);
}

TEST(Synth, RejectsBadParameters) {
  SynthParams p;
  Rng rng(6);
  EXPECT_THROW(synth_sequence(p, 1, rng), ValueError);
  p.max_target = 200;
  EXPECT_THROW(synth_sequence(p, 10, rng), ValueError);
  EXPECT_THROW(motion_from_string("teleport"), ValueError);
  EXPECT_EQ(motion_from_string(to_string(Motion::kRandomWalk)), Motion::kRandomWalk);
}

TEST(Boxes, TopLeftLineConvertsToCenterForm) {
  const auto boxes = parse_boxes("10.5,20.0,30.0,40.0\n");
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], (BBox{25.5, 40.0, 30.0, 40.0}));
}

TEST(Boxes, MalformedLinesReportLineNumber) {
  auto line_of = [](const std::string& text) {
    try {
      parse_boxes(text);
    } catch (const FormatError& e) {
      return e.position();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(line_of("1,2,3,4\n1,2,3\n"), 2u);
  EXPECT_EQ(line_of("1,2,3,4\n1,2,3,4\n1;2,3,4\n"), 3u);
  EXPECT_EQ(line_of("1,2,0,4\n"), 1u);
  EXPECT_EQ(line_of("1,2,3,4x\n"), 1u);
}

TEST(SequenceFiles, SaveLoadRoundTrip) {
  SynthParams p;
  Rng rng(7);
  Sequence s = synth_sequence(p, 6, rng);
  s.name = "rt";
  const fs::path dir = scratch("roundtrip") / "rt";
  save_sequence(s, dir);
  const Sequence t = load_sequence(dir);
  EXPECT_EQ(t.frames, s.frames);
  ASSERT_EQ(t.gt.size(), s.gt.size());
  for (std::size_t i = 0; i < s.gt.size(); ++i) {
    EXPECT_NEAR(t.gt[i].cx, s.gt[i].cx, 1e-4);
    EXPECT_NEAR(t.gt[i].cy, s.gt[i].cy, 1e-4);
    EXPECT_NEAR(t.gt[i].w, s.gt[i].w, 1e-4);
    EXPECT_NEAR(t.gt[i].h, s.gt[i].h, 1e-4);
  }
  const auto all = load_sequences(dir.parent_path());
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].name, "rt");
}

TEST(SequenceFiles, CountMismatchRejected) {
  SynthParams p;
  Rng rng(8);
  const Sequence s = synth_sequence(p, 10, rng);
  const fs::path dir = scratch("mismatch");
  save_sequence(s, dir);
  std::vector<BBox> nine(s.gt.begin(), s.gt.end() - 1);
  save_boxes(nine, dir / "groundtruth.txt");
  EXPECT_THROW(load_sequence(dir), FormatError);
}

TEST(Ppm, RoundTripAndTruncation) {
  Image img(3, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 13);
  const fs::path dir = scratch("ppm");
  write_ppm(img, dir / "a.ppm");
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
  write_text(dir / "b.ppm", "P6\n3 2\n255\nabc");
  EXPECT_THROW(read_ppm(dir / "b.ppm"), FormatError);
  write_text(dir / "c.ppm", "P3\n3 2\n255\n");
  try {
    read_ppm(dir / "c.ppm");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.position(), 0u);
  }
}
