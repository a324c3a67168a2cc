#include "siamlite/tape.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "siamlite/ops.hpp"

namespace siamlite {

namespace {

std::atomic<std::uint64_t> next_tape_serial{1};

template <typename T>
std::span<const T> bias_span(const BasicTensor<T>& bias) {
  return bias.data();
}

template <typename T>
void accumulate(std::optional<BasicTensor<T>>& slot, const BasicTensor<T>& partial) {
  if (!slot) {
    slot = partial;
    return;
  }
  auto dst = slot->data();
  auto src = partial.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

template <typename T>
bool BasicGradients<T>::has(ValueId id) const {
  return id.tape == tape_ && id.index < grads_.size() && grads_[id.index].has_value();
}

template <typename T>
const BasicTensor<T>& BasicGradients<T>::of(ValueId id) const {
  if (id.tape != tape_ || id.index >= grads_.size()) {
    throw ValueError("gradient requested for a value that is not on this tape");
  }
  if (!grads_[id.index]) {
    throw ValueError("value " + std::to_string(id.index) + " is not a parameter");
  }
  return *grads_[id.index];
}

template <typename T>
BasicTape<T>::BasicTape() : serial_(next_tape_serial.fetch_add(1)) {}

template <typename T>
std::uint32_t BasicTape<T>::check(ValueId id) const {
  if (id.tape != serial_ || id.index >= records_.size()) {
    throw ValueError("value is not on this tape");
  }
  return id.index;
}

template <typename T>
ValueId BasicTape<T>::push(Record record) {
  records_.push_back(std::move(record));
  return ValueId{serial_, static_cast<std::uint32_t>(records_.size() - 1)};
}

template <typename T>
ValueId BasicTape<T>::constant(BasicTensor<T> value) {
  Record r;
  r.op = TapeOp::kConstant;
  r.value = std::move(value);
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::parameter(BasicTensor<T> value) {
  Record r;
  r.op = TapeOp::kParameter;
  r.requires_grad = true;
  r.value = std::move(value);
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::conv2d(ValueId input, ValueId weight, ValueId bias, std::size_t stride,
                             std::size_t padding) {
  const auto i = check(input), w = check(weight), b = check(bias);
  Record r{TapeOp::kConv2d, {i, w, b}, stride, padding};
  r.value = siamlite::conv2d(records_[i].value, records_[w].value, bias_span(records_[b].value),
                             stride, padding);
  r.requires_grad =
      records_[i].requires_grad || records_[w].requires_grad || records_[b].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::depthwise_conv2d(ValueId input, ValueId weight, ValueId bias,
                                       std::size_t stride, std::size_t padding) {
  const auto i = check(input), w = check(weight), b = check(bias);
  Record r{TapeOp::kDepthwiseConv2d, {i, w, b}, stride, padding};
  r.value = siamlite::depthwise_conv2d(records_[i].value, records_[w].value,
                                       bias_span(records_[b].value), stride, padding);
  r.requires_grad =
      records_[i].requires_grad || records_[w].requires_grad || records_[b].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::relu6(ValueId input) {
  const auto i = check(input);
  Record r{TapeOp::kRelu6, {i}};
  r.value = siamlite::relu6(records_[i].value);
  r.requires_grad = records_[i].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::add(ValueId a, ValueId b) {
  const auto ia = check(a), ib = check(b);
  Record r{TapeOp::kAdd, {ia, ib}};
  r.value = siamlite::add(records_[ia].value, records_[ib].value);
  r.requires_grad = records_[ia].requires_grad || records_[ib].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::scale(ValueId input, T factor) {
  const auto i = check(input);
  Record r{TapeOp::kScale, {i}};
  r.factor = factor;
  r.value = records_[i].value;
  for (auto& v : r.value.data()) v *= factor;
  r.requires_grad = records_[i].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::cross_correlate(ValueId search_feat, ValueId template_feat) {
  const auto s = check(search_feat), t = check(template_feat);
  Record r{TapeOp::kCrossCorrelate, {s, t}};
  r.value = siamlite::cross_correlate(records_[s].value, records_[t].value);
  r.requires_grad = records_[s].requires_grad || records_[t].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::sum(ValueId input) {
  const auto i = check(input);
  Record r{TapeOp::kSum, {i}};
  T acc{};
  for (T v : records_[i].value.data()) acc += v;
  r.value = BasicTensor<T>(Shape{1, 1, 1, 1}, acc);
  r.requires_grad = records_[i].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::squared_norm(ValueId input) {
  const auto i = check(input);
  Record r{TapeOp::kSquaredNorm, {i}};
  T acc{};
  for (T v : records_[i].value.data()) acc += v * v;
  r.value = BasicTensor<T>(Shape{1, 1, 1, 1}, acc);
  r.requires_grad = records_[i].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::mean_squared_error(ValueId pred, BasicTensor<T> target) {
  const auto p = check(pred);
  const auto& pv = records_[p].value;
  require_same_shape(pv, target, "mean_squared_error");
  if (pv.empty()) throw ShapeError("mean_squared_error: empty input");
  Record r{TapeOp::kMeanSquaredError, {p}};
  T acc{};
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const T d = pv[k] - target[k];
    acc += d * d;
  }
  r.value = BasicTensor<T>(Shape{1, 1, 1, 1}, acc / static_cast<T>(pv.size()));
  r.aux0 = std::move(target);
  r.requires_grad = records_[p].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::binary_cross_entropy(ValueId logits, BasicTensor<T> targets,
                                           BasicTensor<T> weights) {
  const auto l = check(logits);
  const auto& lv = records_[l].value;
  require_same_shape(lv, targets, "binary_cross_entropy");
  require_same_shape(lv, weights, "binary_cross_entropy");
  T count{};
  T acc{};
  for (std::size_t k = 0; k < lv.size(); ++k) {
    if (weights[k] <= T{0}) continue;
    const T x = lv[k];
    const T ax = x < T{0} ? -x : x;
    acc += weights[k] * ((x > T{0} ? x : T{0}) - x * targets[k] + std::log1p(std::exp(-ax)));
    count += weights[k];
  }
  if (count <= T{0}) throw ValueError("binary_cross_entropy: no cell carries weight");
  Record r{TapeOp::kBinaryCrossEntropy, {l}};
  r.value = BasicTensor<T>(Shape{1, 1, 1, 1}, acc / count);
  r.factor = count;
  r.aux0 = std::move(targets);
  r.aux1 = std::move(weights);
  r.requires_grad = records_[l].requires_grad;
  return push(std::move(r));
}

template <typename T>
ValueId BasicTape<T>::smooth_l1(ValueId pred, BasicTensor<T> target, BasicTensor<T> mask) {
  const auto p = check(pred);
  const auto& pv = records_[p].value;
  require_same_shape(pv, target, "smooth_l1");
  require_same_shape(pv, mask, "smooth_l1");
  T count{};
  T acc{};
  for (std::size_t k = 0; k < pv.size(); ++k) {
    if (mask[k] <= T{0}) continue;
    acc += mask[k] * smooth_l1_value(pv[k] - target[k]);
    count += mask[k];
  }
  Record r{TapeOp::kSmoothL1, {p}};
  r.value = BasicTensor<T>(Shape{1, 1, 1, 1}, count > T{0} ? acc / count : T{0});
  r.factor = count;
  r.aux0 = std::move(target);
  r.aux1 = std::move(mask);
  r.requires_grad = records_[p].requires_grad;
  return push(std::move(r));
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(ValueId id) const {
  return records_[check(id)].value;
}

template <typename T>
T BasicTape<T>::scalar(ValueId id) const {
  const auto& v = value(id);
  if (v.size() != 1) throw ShapeError("scalar: value has shape " + v.shape().str());
  return v[0];
}

template <typename T>
TapeOp BasicTape<T>::op(ValueId id) const {
  return records_[check(id)].op;
}

template <typename T>
BasicGradients<T> BasicTape<T>::backward(ValueId loss) const {
  const auto root = check(loss);
  if (records_[root].value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + records_[root].value.shape().str());
  }
  std::vector<std::optional<BasicTensor<T>>> grads(root + 1);
  grads[root] = BasicTensor<T>(records_[root].value.shape(), T{1});

  auto push_grad = [&](std::uint32_t target, const BasicTensor<T>& partial) {
    if (records_[target].requires_grad) accumulate(grads[target], partial);
  };

  for (std::uint32_t idx = root + 1; idx-- > 0;) {
    if (!grads[idx]) continue;
    const Record& r = records_[idx];
    if (!r.requires_grad) continue;
    const BasicTensor<T>& g = *grads[idx];
    switch (r.op) {
      case TapeOp::kConstant:
      case TapeOp::kParameter:
        break;
      case TapeOp::kConv2d:
      case TapeOp::kDepthwiseConv2d: {
        const auto& in = records_[r.inputs[0]].value;
        const auto& w = records_[r.inputs[1]].value;
        auto cg = r.op == TapeOp::kConv2d
                      ? conv2d_backward(in, w, g, r.stride, r.padding)
                      : depthwise_conv2d_backward(in, w, g, r.stride, r.padding);
        push_grad(r.inputs[0], cg.input);
        push_grad(r.inputs[1], cg.weight);
        const auto& bshape = records_[r.inputs[2]].value.shape();
        push_grad(r.inputs[2], BasicTensor<T>(bshape, cg.bias.vector()));
        break;
      }
      case TapeOp::kRelu6:
        push_grad(r.inputs[0], relu6_backward(records_[r.inputs[0]].value, g));
        break;
      case TapeOp::kAdd:
        push_grad(r.inputs[0], g);
        push_grad(r.inputs[1], g);
        break;
      case TapeOp::kScale: {
        BasicTensor<T> s = g;
        for (auto& v : s.data()) v *= r.factor;
        push_grad(r.inputs[0], s);
        break;
      }
      case TapeOp::kCrossCorrelate: {
        // Response = conv2d(search, template as a 1 x C x Ht x Wt filter).
        const auto& s = records_[r.inputs[0]].value;
        const auto& t = records_[r.inputs[1]].value;
        auto cg = conv2d_backward(s, t, g, 1, 0);
        push_grad(r.inputs[0], cg.input);
        push_grad(r.inputs[1], cg.weight);
        break;
      }
      case TapeOp::kSum:
        push_grad(r.inputs[0], BasicTensor<T>(records_[r.inputs[0]].value.shape(), g[0]));
        break;
      case TapeOp::kSquaredNorm: {
        BasicTensor<T> d = records_[r.inputs[0]].value;
        for (auto& v : d.data()) v *= T{2} * g[0];
        push_grad(r.inputs[0], d);
        break;
      }
      case TapeOp::kMeanSquaredError: {
        const auto& p = records_[r.inputs[0]].value;
        BasicTensor<T> d(p.shape());
        const T k = T{2} * g[0] / static_cast<T>(p.size());
        for (std::size_t e = 0; e < p.size(); ++e) d[e] = k * (p[e] - r.aux0[e]);
        push_grad(r.inputs[0], d);
        break;
      }
      case TapeOp::kBinaryCrossEntropy: {
        const auto& x = records_[r.inputs[0]].value;
        BasicTensor<T> d(x.shape());
        for (std::size_t e = 0; e < x.size(); ++e) {
          if (r.aux1[e] <= T{0}) continue;
          d[e] = g[0] * r.aux1[e] * (sigmoid(x[e]) - r.aux0[e]) / r.factor;
        }
        push_grad(r.inputs[0], d);
        break;
      }
      case TapeOp::kSmoothL1: {
        const auto& p = records_[r.inputs[0]].value;
        BasicTensor<T> d(p.shape());
        if (r.factor > T{0}) {
          for (std::size_t e = 0; e < p.size(); ++e) {
            if (r.aux1[e] <= T{0}) continue;
            const T diff = p[e] - r.aux0[e];
            const T slope = diff > T{1} ? T{1} : (diff < T{-1} ? T{-1} : diff);
            d[e] = g[0] * r.aux1[e] * slope / r.factor;
          }
        }
        push_grad(r.inputs[0], d);
        break;
      }
    }
  }

  BasicGradients<T> out;
  out.tape_ = serial_;
  out.grads_.resize(records_.size());
  for (std::uint32_t idx = 0; idx < records_.size(); ++idx) {
    if (records_[idx].op != TapeOp::kParameter) continue;
    if (idx <= root && grads[idx]) {
      out.grads_[idx] = std::move(grads[idx]);
    } else {
      out.grads_[idx] = BasicTensor<T>(records_[idx].value.shape());
    }
  }
  return out;
}

template class BasicGradients<float>;
template class BasicGradients<double>;
template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace siamlite
