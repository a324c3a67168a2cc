#pragma once

#include <span>

#include "siamlite/tensor.hpp"

namespace siamlite {

/// Output spatial extent of a strided, zero-padded window. Throws ShapeError
/// when the window does not fit even once.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Dense convolution (cross-correlation convention, as in every DL framework).
/// weight is Cout x Cin x Kh x Kw, bias has Cout entries. Each output element is
/// accumulated over input channel, then kernel row, then kernel column, and the
/// bias is added last, so results are bit-reproducible.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      std::span<const T> bias, std::size_t stride, std::size_t padding);

/// Per-channel convolution; weight is C x 1 x Kh x Kw.
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                std::span<const T> bias, std::size_t stride,
                                std::size_t padding);

template <typename T>
BasicTensor<T> relu6(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Slides the template feature over the search feature (both batch 1, same
/// channel count) and returns a 1 x 1 x (Hs-Ht+1) x (Ws-Wt+1) response map.
template <typename T>
BasicTensor<T> cross_correlate(const BasicTensor<T>& search_feat,
                               const BasicTensor<T>& template_feat);

/// Half-pixel bilinear resampling of every plane to out_h x out_w.
template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& input, std::size_t out_h,
                               std::size_t out_w);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // 1 x Cout x 1 x 1
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out, std::size_t stride,
                             std::size_t padding);

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                       const BasicTensor<T>& grad_out, std::size_t stride,
                                       std::size_t padding);

/// Gradient of relu6; the subgradient at 0 and 6 is 0.
template <typename T>
BasicTensor<T> relu6_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

}  // namespace siamlite
