#include "siamlite/ops.hpp"

#include <algorithm>
#include <cmath>

namespace siamlite {

namespace {

// Range of output columns [lo, hi) whose tap at kernel offset `k` lands inside
// an input row of length `extent`.
struct TapRange {
  std::size_t lo;
  std::size_t hi;
};

TapRange valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                       std::size_t padding, std::size_t k) {
  // input index = o * stride + k - padding must lie in [0, in_extent)
  const auto first_num = static_cast<std::ptrdiff_t>(padding) - static_cast<std::ptrdiff_t>(k);
  std::size_t lo = 0;
  if (first_num > 0) lo = (static_cast<std::size_t>(first_num) + stride - 1) / stride;
  const auto last_num = static_cast<std::ptrdiff_t>(in_extent) - 1 +
                        static_cast<std::ptrdiff_t>(padding) - static_cast<std::ptrdiff_t>(k);
  if (last_num < 0) return {0, 0};
  const std::size_t hi = std::min(out_extent, static_cast<std::size_t>(last_num) / stride + 1);
  return {std::min(lo, hi), hi};
}

void require_bias(std::size_t got, std::size_t want, const char* op) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(got) +
                     " entries, expected " + std::to_string(want));
  }
}

// Accumulates one (input plane, kernel) pair into one output plane.
template <typename T>
void accumulate_plane(T* out, const T* in, const T* kernel, std::size_t in_h, std::size_t in_w,
                      std::size_t out_h, std::size_t out_w, std::size_t kh, std::size_t kw,
                      std::size_t stride, std::size_t padding) {
  for (std::size_t ky = 0; ky < kh; ++ky) {
    const auto rows = valid_outputs(out_h, in_h, stride, padding, ky);
    for (std::size_t kx = 0; kx < kw; ++kx) {
      const T wv = kernel[ky * kw + kx];
      const auto cols = valid_outputs(out_w, in_w, stride, padding, kx);
      for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
        const T* in_row = in + (oy * stride + ky - padding) * in_w;
        T* out_row = out + oy * out_w;
        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
          out_row[ox] += wv * in_row[ox * stride + kx - padding];
        }
      }
    }
  }
}

template <typename T>
void grad_weight_plane(T* gw, const T* in, const T* go, std::size_t in_h, std::size_t in_w,
                       std::size_t out_h, std::size_t out_w, std::size_t kh, std::size_t kw,
                       std::size_t stride, std::size_t padding) {
  for (std::size_t ky = 0; ky < kh; ++ky) {
    const auto rows = valid_outputs(out_h, in_h, stride, padding, ky);
    for (std::size_t kx = 0; kx < kw; ++kx) {
      const auto cols = valid_outputs(out_w, in_w, stride, padding, kx);
      T acc{};
      for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
        const T* in_row = in + (oy * stride + ky - padding) * in_w;
        const T* go_row = go + oy * out_w;
        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
          acc += go_row[ox] * in_row[ox * stride + kx - padding];
        }
      }
      gw[ky * kw + kx] += acc;
    }
  }
}

template <typename T>
void grad_input_plane(T* gi, const T* kernel, const T* go, std::size_t in_h, std::size_t in_w,
                      std::size_t out_h, std::size_t out_w, std::size_t kh, std::size_t kw,
                      std::size_t stride, std::size_t padding) {
  for (std::size_t ky = 0; ky < kh; ++ky) {
    const auto rows = valid_outputs(out_h, in_h, stride, padding, ky);
    for (std::size_t kx = 0; kx < kw; ++kx) {
      const T wv = kernel[ky * kw + kx];
      const auto cols = valid_outputs(out_w, in_w, stride, padding, kx);
      for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
        T* gi_row = gi + (oy * stride + ky - padding) * in_w;
        const T* go_row = go + oy * out_w;
        for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
          gi_row[ox * stride + kx - padding] += wv * go_row[ox];
        }
      }
    }
  }
}

void require_positive_stride(std::size_t stride, const char* op) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
}

}  // namespace

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (kernel == 0 || input + 2 * padding < kernel) {
    throw ShapeError("window of " + std::to_string(kernel) + " does not fit input extent " +
                     std::to_string(input) + " with padding " + std::to_string(padding) +
                     " (zero-sized output)");
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::span<const T> bias, std::size_t stride, std::size_t padding) {
  require_positive_stride(stride, "conv2d");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.c != is.c) {
    throw ShapeError("conv2d: input " + is.str() + " has " + std::to_string(is.c) +
                     " channels but weight " + ws.str() + " expects " + std::to_string(ws.c));
  }
  require_bias(bias.size(), ws.n, "conv2d");
  const std::size_t oh = conv_output_extent(is.h, ws.h, stride, padding);
  const std::size_t ow = conv_output_extent(is.w, ws.w, stride, padding);
  BasicTensor<T> out(Shape{is.n, ws.n, oh, ow});
  const std::size_t kplane = ws.h * ws.w;
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      T* out_plane = &out.at(n, co, 0, 0);
      for (std::size_t ci = 0; ci < is.c; ++ci) {
        accumulate_plane(out_plane, input.data().data() + input.offset(n, ci, 0, 0),
                         weight.data().data() + (co * ws.c + ci) * kplane, is.h, is.w, oh, ow,
                         ws.h, ws.w, stride, padding);
      }
      for (std::size_t i = 0; i < oh * ow; ++i) out_plane[i] += bias[co];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                std::span<const T> bias, std::size_t stride,
                                std::size_t padding) {
  require_positive_stride(stride, "depthwise_conv2d");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.n != is.c || ws.c != 1) {
    throw ShapeError("depthwise_conv2d: weight " + ws.str() + " does not match input " +
                     is.str() + " (expected " + std::to_string(is.c) + "x1xKhxKw)");
  }
  require_bias(bias.size(), ws.n, "depthwise_conv2d");
  const std::size_t oh = conv_output_extent(is.h, ws.h, stride, padding);
  const std::size_t ow = conv_output_extent(is.w, ws.w, stride, padding);
  BasicTensor<T> out(Shape{is.n, is.c, oh, ow});
  const std::size_t kplane = ws.h * ws.w;
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t c = 0; c < is.c; ++c) {
      T* out_plane = &out.at(n, c, 0, 0);
      accumulate_plane(out_plane, input.data().data() + input.offset(n, c, 0, 0), weight.data().data() + c * kplane, is.h,
                       is.w, oh, ow, ws.h, ws.w, stride, padding);
      for (std::size_t i = 0; i < oh * ow; ++i) out_plane[i] += bias[c];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = std::min(std::max(v, T{0}), T{6});
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + a.shape().str() + " vs " + b.shape().str());
  }
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
BasicTensor<T> cross_correlate(const BasicTensor<T>& search_feat,
                               const BasicTensor<T>& template_feat) {
  const Shape& ss = search_feat.shape();
  const Shape& ts = template_feat.shape();
  if (ss.n != 1 || ts.n != 1) {
    throw ShapeError("cross_correlate: batch must be 1, got " + ss.str() + " and " + ts.str());
  }
  if (ss.c != ts.c) {
    throw ShapeError("cross_correlate: channel mismatch " + ss.str() + " vs " + ts.str());
  }
  if (ts.h > ss.h || ts.w > ss.w) {
    throw ShapeError("cross_correlate: template " + ts.str() + " larger than search " + ss.str());
  }
  const T zero{};
  return conv2d(search_feat, template_feat, std::span<const T>(&zero, 1), 1, 0);
}

template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& input, std::size_t out_h,
                               std::size_t out_w) {
  const Shape& is = input.shape();
  if (out_h == 0 || out_w == 0 || is.h == 0 || is.w == 0) {
    throw ShapeError("resize_bilinear: empty extent");
  }
  if (is.h == out_h && is.w == out_w) return input;
  BasicTensor<T> out(Shape{is.n, is.c, out_h, out_w});
  const double sy = static_cast<double>(is.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(is.w) / static_cast<double>(out_w);
  auto tap = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& f) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    f = pos - static_cast<double>(i0);
  };
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t c = 0; c < is.c; ++c) {
      for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double fy;
        tap((static_cast<double>(y) + 0.5) * sy - 0.5, is.h, y0, y1, fy);
        for (std::size_t x = 0; x < out_w; ++x) {
          std::size_t x0, x1;
          double fx;
          tap((static_cast<double>(x) + 0.5) * sx - 0.5, is.w, x0, x1, fx);
          const double top = (1 - fx) * input.at(n, c, y0, x0) + fx * input.at(n, c, y0, x1);
          const double bot = (1 - fx) * input.at(n, c, y1, x0) + fx * input.at(n, c, y1, x1);
          out.at(n, c, y, x) = static_cast<T>((1 - fy) * top + fy * bot);
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out, std::size_t stride,
                             std::size_t padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const Shape& gs = grad_out.shape();
  ConvGrads<T> g{BasicTensor<T>(is), BasicTensor<T>(ws), BasicTensor<T>(Shape{1, ws.n, 1, 1})};
  const std::size_t kplane = ws.h * ws.w;
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      const T* go = grad_out.data().data() + grad_out.offset(n, co, 0, 0);
      T bsum{};
      for (std::size_t i = 0; i < gs.plane(); ++i) bsum += go[i];
      g.bias[co] += bsum;
      for (std::size_t ci = 0; ci < is.c; ++ci) {
        const std::size_t k = (co * ws.c + ci) * kplane;
        grad_weight_plane(g.weight.data().data() + k, input.data().data() + input.offset(n, ci, 0, 0), go, is.h, is.w, gs.h,
                          gs.w, ws.h, ws.w, stride, padding);
        grad_input_plane(&g.input.at(n, ci, 0, 0), weight.data().data() + k, go, is.h, is.w, gs.h,
                         gs.w, ws.h, ws.w, stride, padding);
      }
    }
  }
  return g;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                       const BasicTensor<T>& grad_out, std::size_t stride,
                                       std::size_t padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const Shape& gs = grad_out.shape();
  ConvGrads<T> g{BasicTensor<T>(is), BasicTensor<T>(ws), BasicTensor<T>(Shape{1, ws.n, 1, 1})};
  const std::size_t kplane = ws.h * ws.w;
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t c = 0; c < is.c; ++c) {
      const T* go = grad_out.data().data() + grad_out.offset(n, c, 0, 0);
      T bsum{};
      for (std::size_t i = 0; i < gs.plane(); ++i) bsum += go[i];
      g.bias[c] += bsum;
      grad_weight_plane(g.weight.data().data() + c * kplane, input.data().data() + input.offset(n, c, 0, 0), go, is.h,
                        is.w, gs.h, gs.w, ws.h, ws.w, stride, padding);
      grad_input_plane(&g.input.at(n, c, 0, 0), weight.data().data() + c * kplane, go, is.h, is.w,
                       gs.h, gs.w, ws.h, ws.w, stride, padding);
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu6_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  BasicTensor<T> g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T x = input[i];
    g[i] = (x > T{0} && x < T{6}) ? grad_out[i] : T{0};
  }
  return g;
}

#define SIAMLITE_INSTANTIATE_OPS(T)                                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 std::span<const T>, std::size_t, std::size_t);                 \
  template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           std::span<const T>, std::size_t, std::size_t);       \
  template BasicTensor<T> relu6(const BasicTensor<T>&);                                         \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> cross_correlate(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> resize_bilinear(const BasicTensor<T>&, std::size_t, std::size_t);     \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                        const BasicTensor<T>&, std::size_t, std::size_t);       \
  template ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                  const BasicTensor<T>&, std::size_t,           \
                                                  std::size_t);                                 \
  template BasicTensor<T> relu6_backward(const BasicTensor<T>&, const BasicTensor<T>&);

SIAMLITE_INSTANTIATE_OPS(float)
SIAMLITE_INSTANTIATE_OPS(double)

#undef SIAMLITE_INSTANTIATE_OPS

}  // namespace siamlite
