#include "siamlite/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "siamlite/ops.hpp"

namespace siamlite {

std::vector<double> rank_filters(const Tensor& weight) {
  const Shape& s = weight.shape();
  if (s.n == 0) throw ShapeError("rank_filters: weight has no filters");
  const std::size_t per = s.c * s.h * s.w;
  std::vector<double> scores(s.n, 0.0);
  for (std::size_t f = 0; f < s.n; ++f) {
    double acc = 0;
    for (std::size_t k = 0; k < per; ++k) acc += std::abs(static_cast<double>(weight[f * per + k]));
    scores[f] = acc;
  }
  return scores;
}

namespace {

LayerRange range_of(const NetworkSpec& spec, std::size_t layer) {
  if (spec.backbone.contains(layer)) return spec.backbone;
  if (spec.cls_head.contains(layer)) return spec.cls_head;
  return spec.reg_head;
}

bool channelwise(LayerKind k) { return k == LayerKind::kRelu6 || k == LayerKind::kDepthwiseConv; }

// Index of the layer that consumes `layer`'s output channels through a single
// input slice, or npos when the channels are tied to something else.
constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::size_t slice_consumer(const NetworkSpec& spec, std::size_t layer) {
  const LayerRange range = range_of(spec, layer);
  std::size_t j = layer + 1;
  while (j < range.end && channelwise(spec.layers[j].kind)) ++j;
  if (j >= range.end) return npos;
  const LayerSpec& c = spec.layers[j];
  if (c.kind == LayerKind::kDenseConv || c.kind == LayerKind::kPointwiseConv) return j;
  if (c.kind == LayerKind::kInvertedResidual && !c.has_skip()) return j;
  return npos;
}

// Producer conv slot of a layer's output channels.
std::size_t output_slot(const LayerSpec& layer) {
  return layer.kind == LayerKind::kInvertedResidual ? 2 : 0;
}

double relu6_value(double v) { return std::clamp(v, 0.0, 6.0); }

Tensor keep_filters(const Tensor& t, const std::vector<std::size_t>& keep) {
  const Shape& s = t.shape();
  const std::size_t per = s.c * s.h * s.w;
  Tensor out(Shape{keep.size(), s.c, s.h, s.w});
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(keep[k] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * per));
  }
  return out;
}

Tensor keep_bias(const Tensor& b, const std::vector<std::size_t>& keep) {
  Tensor out(Shape{1, keep.size(), 1, 1});
  for (std::size_t k = 0; k < keep.size(); ++k) out[k] = b[keep[k]];
  return out;
}

Tensor keep_inputs(const Tensor& t, const std::vector<std::size_t>& keep) {
  const Shape& s = t.shape();
  const std::size_t plane = s.h * s.w;
  Tensor out(Shape{s.n, keep.size(), s.h, s.w});
  for (std::size_t o = 0; o < s.n; ++o) {
    for (std::size_t k = 0; k < keep.size(); ++k) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>((o * s.c + keep[k]) * plane),
                  plane, out.data().begin() + static_cast<std::ptrdiff_t>((o * keep.size() + k) * plane));
    }
  }
  return out;
}

std::vector<std::size_t> complement(const std::vector<std::size_t>& keep, std::size_t n) {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < keep.size() && keep[k] == i) {
      ++k;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

// Applies the channel constants `values` (indexed by original channel) of the
// removed set to a depthwise conv and returns the constants it emits.
void depthwise_constants(const ConvParams& dw, const std::vector<std::size_t>& removed,
                         std::vector<double>& values) {
  const Shape& s = dw.weight.shape();
  const std::size_t per = s.h * s.w;
  for (std::size_t c : removed) {
    double k = 0;
    for (std::size_t e = 0; e < per; ++e) k += dw.weight[c * per + e];
    values[c] = values[c] * k + dw.bias[c];
  }
}

// Adds sum_c W[o, c] * values[c] over removed inputs c to the consumer bias.
void fold_into_bias(ConvParams& conv, const std::vector<std::size_t>& removed,
                    const std::vector<double>& values) {
  const Shape& s = conv.weight.shape();
  const std::size_t per = s.h * s.w;
  for (std::size_t o = 0; o < s.n; ++o) {
    double acc = 0;
    for (std::size_t c : removed) {
      double k = 0;
      for (std::size_t e = 0; e < per; ++e) k += conv.weight[(o * s.c + c) * per + e];
      acc += k * values[c];
    }
    conv.bias[o] = static_cast<float>(conv.bias[o] + acc);
  }
}

std::vector<std::size_t> choose_kept(const std::vector<double>& scores, std::size_t drop) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

void prune_output(Model& m, std::size_t layer, const std::vector<std::size_t>& kept) {
  LayerSpec& producer = m.spec.layers[layer];
  const std::size_t n = producer.out_channels;
  const auto removed = complement(kept, n);
  ConvParams& p = m.weights.layers[layer].convs[output_slot(producer)];
  std::vector<double> values(n, 0.0);
  for (std::size_t c : removed) values[c] = p.bias[c];
  p.weight = keep_filters(p.weight, kept);
  p.bias = keep_bias(p.bias, kept);
  producer.out_channels = kept.size();

  const std::size_t consumer = slice_consumer(m.spec, layer);
  for (std::size_t j = layer + 1; j < consumer; ++j) {
    LayerSpec& l = m.spec.layers[j];
    if (l.kind == LayerKind::kRelu6) {
      for (std::size_t c : removed) values[c] = relu6_value(values[c]);
    } else {
      ConvParams& dw = m.weights.layers[j].convs[0];
      depthwise_constants(dw, removed, values);
      dw.weight = keep_filters(dw.weight, kept);
      dw.bias = keep_bias(dw.bias, kept);
    }
    l.in_channels = l.out_channels = kept.size();
  }
  ConvParams& c = m.weights.layers[consumer].convs[0];
  fold_into_bias(c, removed, values);
  c.weight = keep_inputs(c.weight, kept);
  m.spec.layers[consumer].in_channels = kept.size();
}

void prune_hidden(Model& m, std::size_t layer, const std::vector<std::size_t>& kept) {
  LayerSpec& l = m.spec.layers[layer];
  const std::size_t n = l.hidden_channels;
  const auto removed = complement(kept, n);
  auto& convs = m.weights.layers[layer].convs;
  std::vector<double> values(n, 0.0);
  for (std::size_t c : removed) values[c] = relu6_value(convs[0].bias[c]);
  convs[0].weight = keep_filters(convs[0].weight, kept);
  convs[0].bias = keep_bias(convs[0].bias, kept);
  depthwise_constants(convs[1], removed, values);
  for (std::size_t c : removed) values[c] = relu6_value(values[c]);
  convs[1].weight = keep_filters(convs[1].weight, kept);
  convs[1].bias = keep_bias(convs[1].bias, kept);
  fold_into_bias(convs[2], removed, values);
  convs[2].weight = keep_inputs(convs[2].weight, kept);
  l.hidden_channels = kept.size();
}

// Shrinking an IR output must not create a skip connection that did not exist.
bool skip_flips(const NetworkSpec& spec, std::size_t layer, std::size_t new_channels) {
  const LayerSpec& p = spec.layers[layer];
  if (p.kind == LayerKind::kInvertedResidual && p.stride == 1 && p.in_channels == new_channels) {
    return true;
  }
  const std::size_t consumer = slice_consumer(spec, layer);
  const LayerSpec& c = spec.layers[consumer];
  return c.kind == LayerKind::kInvertedResidual && c.stride == 1 && c.out_channels == new_channels;
}

}  // namespace

std::vector<PrunableUnit> prunable_units(const NetworkSpec& spec) {
  std::vector<PrunableUnit> units;
  for (std::size_t i = spec.backbone.begin; i < spec.backbone.end; ++i) {
    const LayerSpec& l = spec.layers[i];
    const bool conv_out = l.kind == LayerKind::kDenseConv || l.kind == LayerKind::kPointwiseConv ||
                          (l.kind == LayerKind::kInvertedResidual && !l.has_skip());
    if (conv_out && l.out_channels >= 2 && slice_consumer(spec, i) != npos) {
      units.push_back({i, PrunableUnit::Kind::kLayerOutput, l.out_channels});
    }
    if (l.kind == LayerKind::kInvertedResidual && l.hidden_channels >= 2) {
      units.push_back({i, PrunableUnit::Kind::kHidden, l.hidden_channels});
    }
  }
  return units;
}

PruneResult prune_filters(const Model& model, double fraction) {
  model.spec.validate();
  return prune_filters(model, fraction, prunable_units(model.spec));
}

PruneResult prune_filters(const Model& model, double fraction,
                          const std::vector<PrunableUnit>& units) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ValueError("prune: fraction must be in [0, 1)");
  }
  model.spec.validate();
  validate_weights(model.spec, model.weights);
  const auto allowed = prunable_units(model.spec);
  for (const auto& u : units) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const PrunableUnit& a) {
      return a.layer == u.layer && a.kind == u.kind && a.channels == u.channels;
    });
    if (!ok) throw ValueError("prune: layer " + std::to_string(u.layer) + " is not prunable");
  }
  PruneResult result;
  result.model = model;

  // Scores come from the unpruned weights so the order units are applied in
  // does not matter.
  struct Plan {
    PrunableUnit unit;
    std::vector<double> scores;
    std::vector<std::size_t> kept;
  };
  std::vector<Plan> plans;
  for (const auto& u : units) {
    const LayerSpec& l = model.spec.layers[u.layer];
    const std::size_t slot = u.kind == PrunableUnit::Kind::kHidden ? 0 : output_slot(l);
    Plan plan{u, rank_filters(model.weights.layers[u.layer].convs[slot].weight), {}};
    auto drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(u.channels)));
    if (drop >= u.channels) {
      throw ValueError("prune: fraction leaves no filters in layer " + std::to_string(u.layer));
    }
    if (u.kind == PrunableUnit::Kind::kLayerOutput) {
      while (drop > 0 && skip_flips(model.spec, u.layer, u.channels - drop)) --drop;
    }
    plan.kept = choose_kept(plan.scores, drop);
    plans.push_back(std::move(plan));
  }
  for (const auto& plan : plans) {
    if (plan.kept.size() < plan.unit.channels) {
      if (plan.unit.kind == PrunableUnit::Kind::kHidden) {
        prune_hidden(result.model, plan.unit.layer, plan.kept);
      } else {
        prune_output(result.model, plan.unit.layer, plan.kept);
      }
    }
    result.report.layers.push_back(
        {plan.unit.layer, plan.unit.kind, plan.unit.channels, plan.kept, plan.scores});
  }
  result.model.spec.validate();
  validate_weights(result.model.spec, result.model.weights);
  return result;
}

PruneResult prune_network(const Model& model, double fraction, std::size_t fine_tune_steps,
                          const std::vector<Sequence>& train_inputs, const TrainConfig& config,
                          const SampleConfig& sampling) {
  PruneResult result = prune_filters(model, fraction);
  if (fine_tune_steps > 0) {
    TrainConfig tune = config;
    tune.steps = fine_tune_steps;
    tune.kd_weight = 0;
    TrainResult tr = train(std::move(result.model), train_inputs, tune, nullptr, sampling);
    result.model = std::move(tr.model);
    result.fine_tune_history = std::move(tr.history);
  }
  return result;
}

// Quantization.

namespace {

double round_half_away(double x) { return std::round(x); }

// Smallest float not below x, so the code grid never falls short of the range.
double float_at_least(double x) {
  float f = static_cast<float>(x);
  if (static_cast<double>(f) < x) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  return f;
}

}  // namespace

std::uint32_t QuantParams::quantize(double x) const {
  const double q = round_half_away(x / scale) + zero_point;
  return static_cast<std::uint32_t>(std::clamp(q, 0.0, static_cast<double>(qmax())));
}

double QuantParams::dequantize(std::uint32_t code) const {
  return (static_cast<double>(code) - zero_point) * scale;
}

QuantParams quant_params_for_range(double lo, double hi, int bits) {
  if (bits != 8 && bits != 16) throw ValueError("quantization supports 8 or 16 bits");
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw ValueError("quantization range must be finite and ordered");
  }
  QuantParams p;
  p.bits = bits;
  const double qmax = p.qmax();
  if (lo == hi) {
    p.scale = float_at_least(std::max(std::abs(lo), 1.0) / qmax);
    p.zero_point = static_cast<std::int32_t>(std::clamp(round_half_away(-lo / p.scale), 0.0, qmax));
    return p;
  }
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  p.scale = float_at_least((hi - lo) / qmax);
  p.zero_point = static_cast<std::int32_t>(std::clamp(round_half_away(-lo / p.scale), 0.0, qmax));
  return p;
}

void ValueRange::observe(const Tensor& t) {
  for (float v : t.data()) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
}

void ValueRange::merge(const ValueRange& other) {
  lo = std::min(lo, other.lo);
  hi = std::max(hi, other.hi);
}

std::vector<PatchPair> patch_pairs(const std::vector<PairSample>& samples) {
  std::vector<PatchPair> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.template_patch, s.search_patch});
  return out;
}

std::vector<TapId> activation_taps(const NetworkSpec& spec) {
  std::vector<TapId> taps;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const int li = static_cast<int>(i);
    if (spec.layers[i].kind == LayerKind::kInvertedResidual) {
      taps.push_back({li, TapId::kExpand});
      taps.push_back({li, TapId::kDepthwise});
    }
    taps.push_back({li, TapId::kOutput});
  }
  taps.push_back({TapId::kCorrelation, TapId::kOutput});
  std::sort(taps.begin(), taps.end());
  return taps;
}

bool feeds_relu6(const NetworkSpec& spec, const TapId& id) {
  if (id.layer < 0 || id.point != TapId::kOutput) return false;
  const auto next = static_cast<std::size_t>(id.layer) + 1;
  if (next >= spec.layers.size() || spec.layers[next].kind != LayerKind::kRelu6) return false;
  const LayerRange r = range_of(spec, static_cast<std::size_t>(id.layer));
  return r.contains(next);
}

std::map<TapId, ValueRange> observe_activations(const Model& model,
                                                const std::vector<PatchPair>& calibration) {
  std::map<TapId, ValueRange> ranges;
  const ActivationHook hook = [&](const TapId& id, Tensor& t) {
    if (feeds_relu6(model.spec, id)) {
      ranges[id].observe(relu6(t));
    } else {
      ranges[id].observe(t);
    }
  };
  for (const auto& pair : calibration) {
    model_forward(model.spec, model.weights, pair.template_patch, pair.search_patch, hook);
  }
  return ranges;
}

QuantPlan calibrate(const Model& model, const std::vector<PatchPair>& calibration, int bits) {
  if (calibration.empty()) throw ValueError("calibrate: empty calibration set");
  model.spec.validate();
  validate_weights(model.spec, model.weights);
  QuantPlan plan;
  plan.bits = bits;
  for (const auto& layer : model.weights.layers) {
    auto& slots = plan.weights.emplace_back();
    for (const auto& conv : layer.convs) {
      ValueRange r;
      r.observe(conv.weight);
      slots.push_back(quant_params_for_range(r.lo, r.hi, bits));
    }
  }
  const auto ranges = observe_activations(model, calibration);
  for (const TapId& id : activation_taps(model.spec)) {
    auto it = ranges.find(id);
    if (it == ranges.end() || it->second.empty()) {
      throw Error("calibrate: tap (" + std::to_string(id.layer) + "," + std::to_string(id.point) +
                  ") was never observed");
    }
    plan.activations[id] = quant_params_for_range(it->second.lo, it->second.hi, bits);
  }
  return plan;
}

Tensor quantize_dequantize(const Tensor& t, const QuantParams& params) {
  Tensor out = t;
  for (auto& v : out.data()) v = static_cast<float>(params.fake_quantize(v));
  return out;
}

QuantizedNetwork quantize_network(const Model& model, const QuantPlan& plan) {
  model.spec.validate();
  validate_weights(model.spec, model.weights);
  if (plan.weights.size() != model.weights.layers.size()) {
    throw ValueError("quantize_network: plan covers " + std::to_string(plan.weights.size()) +
                     " layers, model has " + std::to_string(model.weights.layers.size()));
  }
  QuantizedNetwork q;
  q.spec = model.spec;
  q.bits = plan.bits;
  for (std::size_t i = 0; i < model.weights.layers.size(); ++i) {
    const auto& convs = model.weights.layers[i].convs;
    if (plan.weights[i].size() != convs.size()) {
      throw ValueError("quantize_network: missing weight params for layer " + std::to_string(i));
    }
    auto& out = q.layers.emplace_back();
    for (std::size_t s = 0; s < convs.size(); ++s) {
      const QuantParams& p = plan.weights[i][s];
      if (p.bits != plan.bits) throw ValueError("quantize_network: mixed bit widths");
      QuantizedConv qc{convs[s].weight.shape(), {}, p, convs[s].bias};
      qc.codes.reserve(convs[s].weight.size());
      for (float v : convs[s].weight.data()) {
        qc.codes.push_back(static_cast<std::uint16_t>(p.quantize(v)));
      }
      out.push_back(std::move(qc));
    }
  }
  for (const TapId& id : activation_taps(model.spec)) {
    auto it = plan.activations.find(id);
    if (it == plan.activations.end()) {
      throw ValueError("quantize_network: missing activation params for layer " +
                       std::to_string(id.layer));
    }
    q.activations[id] = it->second;
  }
  q.validate();
  return q;
}

void QuantizedNetwork::validate() const {
  spec.validate();
  if (bits != 8 && bits != 16) throw ValueError("quantized network: bits must be 8 or 16");
  if (layers.size() != spec.layers.size()) {
    throw ShapeError("quantized network: layer count does not match spec");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto slots = conv_slots(spec.layers[i]);
    if (slots.size() != layers[i].size()) {
      throw ShapeError("quantized network: layer " + std::to_string(i) + " slot count mismatch");
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const QuantizedConv& c = layers[i][s];
      if (c.shape != slots[s].weight_shape() || c.codes.size() != c.shape.count() ||
          c.bias.shape() != Shape{1, c.shape.n, 1, 1}) {
        throw ShapeError("quantized network: layer " + std::to_string(i) + " blob shape mismatch");
      }
      if (!(c.params.scale > 0) || c.params.bits != bits || c.params.zero_point < 0 ||
          c.params.zero_point > c.params.qmax()) {
        throw ValueError("quantized network: bad weight params in layer " + std::to_string(i));
      }
      for (auto code : c.codes) {
        if (code > c.params.qmax()) throw ValueError("quantized network: code out of range");
      }
    }
  }
  for (const TapId& id : activation_taps(spec)) {
    auto it = activations.find(id);
    if (it == activations.end()) {
      throw ValueError("quantized network: missing activation params for layer " +
                       std::to_string(id.layer));
    }
    if (!(it->second.scale > 0) || it->second.bits != bits) {
      throw ValueError("quantized network: bad activation params");
    }
  }
}

Weights QuantizedNetwork::dequantized_weights() const {
  Weights w;
  for (const auto& layer : layers) {
    auto& out = w.layers.emplace_back();
    for (const auto& c : layer) {
      Tensor weight(c.shape);
      for (std::size_t e = 0; e < c.codes.size(); ++e) {
        weight[e] = static_cast<float>(c.params.dequantize(c.codes[e]));
      }
      out.convs.push_back({std::move(weight), c.bias});
    }
  }
  return w;
}

namespace {

ActivationHook fake_quant_hook(const std::map<TapId, QuantParams>& activations) {
  return [&activations](const TapId& id, Tensor& t) {
    auto it = activations.find(id);
    if (it == activations.end()) throw ValueError("quantized forward: tap without params");
    for (auto& v : t.data()) v = static_cast<float>(it->second.fake_quantize(v));
  };
}

}  // namespace

HeadMaps quantized_forward(const QuantizedNetwork& qnet, const Tensor& template_patch,
                           const Tensor& search_patch) {
  const Weights w = qnet.dequantized_weights();
  return model_forward(qnet.spec, w, template_patch, search_patch,
                       fake_quant_hook(qnet.activations));
}

QuantizedModel::QuantizedModel(QuantizedNetwork qnet)
    : qnet_(std::move(qnet)), weights_(qnet_.dequantized_weights()),
      hook_(fake_quant_hook(qnet_.activations)) {
  qnet_.validate();
}

Tensor QuantizedModel::embed(const Tensor& patch) const {
  return forward_backbone(qnet_.spec, weights_, patch, hook_);
}

HeadMaps QuantizedModel::respond(const Tensor& template_feature, const Tensor& search_patch) const {
  return siamlite::respond(qnet_.spec, weights_, template_feature, search_patch, hook_);
}

}  // namespace siamlite
