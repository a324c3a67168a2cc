#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "siamlite/error.hpp"
#include "siamlite/tensor.hpp"

namespace siamlite {

/// 8-bit RGB image, interleaved, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Axis-aligned box, center form, continuous pixel coordinates (pixel i spans [i, i+1)).
struct BBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  static BBox from_top_left(double x, double y, double w, double h) {
    return BBox{x + w / 2.0, y + h / 2.0, w, h};
  }
  double left() const { return cx - w / 2.0; }
  double top() const { return cy - h / 2.0; }
  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
           w > 0 && h > 0;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline void require_valid(const BBox& b, const char* what) {
  if (!b.valid()) {
    throw ValueError(std::string(what) + ": degenerate box (w=" + std::to_string(b.w) +
                     ", h=" + std::to_string(b.h) + ")");
  }
}

/// Per-channel mean in [0, 1].
std::array<float, 3> mean_color(const Image& image);

/// Bilinearly resamples the square of side `side` centered at (cx, cy) to an
/// out_size x out_size 1 x 3 patch with values in [0, 1]. Samples that fall
/// outside the frame take the frame's mean color.
Tensor crop_square(const Image& image, double cx, double cy, double side, std::size_t out_size);

/// Square crop of side context_factor * max(w, h) around the box.
Tensor crop_patch(const Image& image, const BBox& bbox, double context_factor,
                  std::size_t out_size);

}  // namespace siamlite
