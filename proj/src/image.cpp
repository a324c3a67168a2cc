#include "siamlite/image.hpp"

#include <algorithm>

namespace siamlite {

std::array<float, 3> mean_color(const Image& image) {
  std::array<double, 3> acc{0, 0, 0};
  const std::size_t pixels = image.width * image.height;
  if (pixels == 0) throw ValueError("mean_color: empty image");
  for (std::size_t i = 0; i < pixels; ++i) {
    for (std::size_t c = 0; c < 3; ++c) acc[c] += image.rgb[i * 3 + c];
  }
  std::array<float, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    out[c] = static_cast<float>(acc[c] / static_cast<double>(pixels) / 255.0);
  }
  return out;
}

Tensor crop_square(const Image& image, double cx, double cy, double side, std::size_t out_size) {
  if (out_size < 8) throw ValueError("crop: out_size must be at least 8");
  if (!(side > 0) || !std::isfinite(side) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw ValueError("crop: degenerate crop region");
  }
  if (image.width == 0 || image.height == 0) throw ValueError("crop: empty image");
  const auto mean = mean_color(image);
  Tensor patch(Shape{1, 3, out_size, out_size});
  const double step = side / static_cast<double>(out_size);
  const double x0 = cx - side / 2.0;
  const double y0 = cy - side / 2.0;
  const auto W = static_cast<std::ptrdiff_t>(image.width);
  const auto H = static_cast<std::ptrdiff_t>(image.height);

  auto sample = [&](std::ptrdiff_t x, std::ptrdiff_t y, std::size_t c) -> double {
    if (x < 0 || y < 0 || x >= W || y >= H) return mean[c];
    return image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) / 255.0;
  };

  for (std::size_t v = 0; v < out_size; ++v) {
    const double py = y0 + (static_cast<double>(v) + 0.5) * step - 0.5;
    const double fy0 = std::floor(py);
    const double ty = py - fy0;
    const auto iy = static_cast<std::ptrdiff_t>(fy0);
    for (std::size_t u = 0; u < out_size; ++u) {
      const double px = x0 + (static_cast<double>(u) + 0.5) * step - 0.5;
      const double fx0 = std::floor(px);
      const double tx = px - fx0;
      const auto ix = static_cast<std::ptrdiff_t>(fx0);
      for (std::size_t c = 0; c < 3; ++c) {
        double value;
        if (tx == 0.0 && ty == 0.0) {
          value = sample(ix, iy, c);
        } else {
          const double top = (1 - tx) * sample(ix, iy, c) + tx * sample(ix + 1, iy, c);
          const double bot = (1 - tx) * sample(ix, iy + 1, c) + tx * sample(ix + 1, iy + 1, c);
          value = (1 - ty) * top + ty * bot;
        }
        patch.at(0, c, v, u) = static_cast<float>(value);
      }
    }
  }
  return patch;
}

Tensor crop_patch(const Image& image, const BBox& bbox, double context_factor,
                  std::size_t out_size) {
  require_valid(bbox, "crop_patch");
  if (!(context_factor > 0)) throw ValueError("crop_patch: context factor must be positive");
  return crop_square(image, bbox.cx, bbox.cy, context_factor * std::max(bbox.w, bbox.h),
                     out_size);
}

}  // namespace siamlite
