#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "siamlite/image.hpp"
#include "siamlite/random.hpp"

namespace siamlite {

struct Sequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<BBox> gt;

  /// Throws ValueError if gt and frames disagree or a box is degenerate.
  void validate() const;
  std::size_t size() const { return frames.size(); }
};

enum class Motion { kStatic, kLinear, kRandomWalk };

std::string to_string(Motion motion);
Motion motion_from_string(const std::string& name);

struct SynthParams {
  std::size_t width = 128;
  std::size_t height = 128;
  double min_target = 20;
  double max_target = 40;
  Motion motion = Motion::kLinear;
  double speed = 1.0;  // px per frame
  std::optional<double> direction;               // radians; drawn from rng when unset
  std::optional<std::array<double, 2>> start;    // initial center; drawn when unset
  std::uint64_t texture_seed = 0;
  double noise = 12.0;  // amplitude of per-frame background noise, 8-bit units
  bool occluder = false;
};

/// A textured rectangle moving over a noisy, smoothly-colored background.
/// Linear and random-walk paths reflect off the frame border so the target
/// always stays fully inside.
Sequence synth_sequence(const SynthParams& params, std::size_t length, Rng& rng);

// Files.

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

/// Parses `x,y,w,h` lines (top-left convention) into center-form boxes.
/// Throws FormatError carrying the 1-based line number.
std::vector<BBox> parse_boxes(const std::string& text);
std::vector<BBox> load_boxes(const std::filesystem::path& path);
void save_boxes(const std::vector<BBox>& boxes, const std::filesystem::path& path);

/// A sequence directory holds frames `000000.ppm ...` and `groundtruth.txt`.
Sequence load_sequence(const std::filesystem::path& dir);
void save_sequence(const Sequence& sequence, const std::filesystem::path& dir);

/// Loads `dir` itself when it is a sequence, otherwise every sequence
/// subdirectory in name order.
std::vector<Sequence> load_sequences(const std::filesystem::path& dir);

inline void save_results(const std::vector<BBox>& boxes, const std::filesystem::path& path) {
  save_boxes(boxes, path);
}

}  // namespace siamlite
