#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "siamlite/tensor.hpp"

namespace siamlite {

/// Handle to a value recorded on a specific tape.
struct ValueId {
  std::uint64_t tape = 0;
  std::uint32_t index = 0;
  friend bool operator==(const ValueId&, const ValueId&) = default;
};

enum class TapeOp : std::uint8_t {
  kConstant,
  kParameter,
  kConv2d,
  kDepthwiseConv2d,
  kRelu6,
  kAdd,
  kScale,
  kCrossCorrelate,
  kSum,
  kSquaredNorm,
  kMeanSquaredError,
  kBinaryCrossEntropy,
  kSmoothL1,
};

template <typename T>
class BasicTape;

/// d(loss)/d(parameter) for every parameter reachable from the loss.
template <typename T>
class BasicGradients {
 public:
  bool has(ValueId id) const;
  /// Throws ValueError for non-parameters and values from another tape.
  const BasicTensor<T>& of(ValueId id) const;

 private:
  friend class BasicTape<T>;
  std::uint64_t tape_ = 0;
  std::vector<std::optional<BasicTensor<T>>> grads_;
};

/// Single-owner recording of a computation. Every op evaluates eagerly and
/// appends one record; backward() replays the records in reverse creation
/// order, summing partials for values consumed more than once.
template <typename T>
class BasicTape {
 public:
  BasicTape();
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) noexcept = default;
  BasicTape& operator=(BasicTape&&) noexcept = default;

  /// Leaf that never receives a gradient.
  ValueId constant(BasicTensor<T> value);
  /// Leaf whose gradient backward() reports.
  ValueId parameter(BasicTensor<T> value);

  /// bias is a 1 x Cout x 1 x 1 value.
  ValueId conv2d(ValueId input, ValueId weight, ValueId bias, std::size_t stride,
                 std::size_t padding);
  ValueId depthwise_conv2d(ValueId input, ValueId weight, ValueId bias, std::size_t stride,
                           std::size_t padding);
  ValueId relu6(ValueId input);
  ValueId add(ValueId a, ValueId b);
  ValueId scale(ValueId input, T factor);
  ValueId cross_correlate(ValueId search_feat, ValueId template_feat);
  ValueId sum(ValueId input);
  ValueId squared_norm(ValueId input);

  /// mean((pred - target)^2)
  ValueId mean_squared_error(ValueId pred, BasicTensor<T> target);
  /// Logistic cross-entropy averaged over cells with weight > 0. Throws
  /// ValueError when no cell carries weight.
  ValueId binary_cross_entropy(ValueId logits, BasicTensor<T> targets, BasicTensor<T> weights);
  /// Smooth-L1 averaged over elements with mask > 0; 0 when the mask is empty.
  ValueId smooth_l1(ValueId pred, BasicTensor<T> target, BasicTensor<T> mask);

  const BasicTensor<T>& value(ValueId id) const;
  T scalar(ValueId id) const;
  std::size_t size() const { return records_.size(); }
  TapeOp op(ValueId id) const;

  /// Throws ShapeError when `loss` is not a single element.
  BasicGradients<T> backward(ValueId loss) const;

 private:
  struct Record {
    explicit Record(TapeOp o = TapeOp::kConstant, std::array<std::uint32_t, 3> in = {},
                    std::size_t s = 1, std::size_t p = 0)
        : op(o), inputs(in), stride(s), padding(p) {}

    TapeOp op;
    std::array<std::uint32_t, 3> inputs;
    std::size_t stride;
    std::size_t padding;
    T factor{};
    bool requires_grad = false;
    BasicTensor<T> value;
    BasicTensor<T> aux0;  // loss targets
    BasicTensor<T> aux1;  // loss weights / masks
  };

  std::uint32_t check(ValueId id) const;
  ValueId push(Record record);

  std::uint64_t serial_;
  std::vector<Record> records_;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;
using Gradients = BasicGradients<float>;
using GradientsD = BasicGradients<double>;

/// Elementwise smooth-L1: 0.5x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename T>
T smooth_l1_value(T x) {
  const T a = x < T{0} ? -x : x;
  return a < T{1} ? T{0.5} * x * x : a - T{0.5};
}

}  // namespace siamlite
