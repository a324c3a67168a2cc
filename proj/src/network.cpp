#include "siamlite/network.hpp"

#include <cmath>

#include "siamlite/ops.hpp"
#include "siamlite/random.hpp"

namespace siamlite {

namespace {

const char* const kKindNames[] = {"dense-conv", "depthwise-conv", "pointwise-conv", "relu6",
                                  "inverted-residual"};

std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return "layer " + std::to_string(index) + " (" + to_string(layer.kind) + ")";
}

std::size_t layer_output_extent(const LayerSpec& layer, std::size_t in) {
  if (layer.kind == LayerKind::kRelu6) return in;
  return conv_output_extent(in, layer.kernel, layer.stride, layer.padding);
}

std::size_t range_output_extent(const NetworkSpec& spec, LayerRange range, std::size_t in) {
  for (std::size_t i = range.begin; i < range.end; ++i) in = layer_output_extent(spec.layers[i], in);
  return in;
}

// Eager evaluation over Weights.
struct EvalBackend {
  using Value = Tensor;
  const Weights& weights;
  const ActivationHook& hook;

  Value conv(const Value& x, std::size_t layer, std::size_t slot, const ConvSlot& geom) {
    const ConvParams& p = weights.layers[layer].convs[slot];
    return geom.depthwise
               ? depthwise_conv2d(x, p.weight, p.bias.data(), geom.stride, geom.padding)
               : conv2d(x, p.weight, p.bias.data(), geom.stride, geom.padding);
  }
  Value relu(const Value& x) { return relu6(x); }
  Value sum(const Value& a, const Value& b) { return add(a, b); }
  Value correlate(const Value& s, const Value& t) { return cross_correlate(s, t); }
  void tap(Value& x, int layer, int point) {
    if (hook) hook(TapId{layer, point}, x);
  }
};

// Tape recording over WeightIds.
struct TapeBackend {
  using Value = ValueId;
  Tape& tape;
  const WeightIds& ids;

  Value conv(Value x, std::size_t layer, std::size_t slot, const ConvSlot& geom) {
    const auto& p = ids.layers[layer][slot];
    return geom.depthwise ? tape.depthwise_conv2d(x, p.weight, p.bias, geom.stride, geom.padding)
                          : tape.conv2d(x, p.weight, p.bias, geom.stride, geom.padding);
  }
  Value relu(Value x) { return tape.relu6(x); }
  Value sum(Value a, Value b) { return tape.add(a, b); }
  Value correlate(Value s, Value t) { return tape.cross_correlate(s, t); }
  void tap(Value&, int, int) {}
};

template <typename Backend>
typename Backend::Value run_layers(const NetworkSpec& spec, LayerRange range,
                                   typename Backend::Value x, Backend& backend) {
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const LayerSpec& layer = spec.layers[i];
    const int li = static_cast<int>(i);
    const auto slots = conv_slots(layer);
    switch (layer.kind) {
      case LayerKind::kRelu6:
        x = backend.relu(x);
        break;
      case LayerKind::kDenseConv:
      case LayerKind::kPointwiseConv:
      case LayerKind::kDepthwiseConv:
        x = backend.conv(x, i, 0, slots[0]);
        break;
      case LayerKind::kInvertedResidual: {
        auto h = backend.relu(backend.conv(x, i, 0, slots[0]));
        backend.tap(h, li, TapId::kExpand);
        h = backend.relu(backend.conv(h, i, 1, slots[1]));
        backend.tap(h, li, TapId::kDepthwise);
        h = backend.conv(h, i, 2, slots[2]);
        x = layer.has_skip() ? backend.sum(h, x) : h;
        break;
      }
    }
    backend.tap(x, li, TapId::kOutput);
  }
  return x;
}

void require_patch(const Shape& s, std::size_t size, const char* what) {
  if (s != Shape{1, 3, size, size}) {
    throw ShapeError(std::string(what) + " patch must be 1x3x" + std::to_string(size) + "x" +
                     std::to_string(size) + ", got " + s.str());
  }
}

}  // namespace

std::string to_string(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_string(const std::string& name) {
  for (int k = 0; k < 5; ++k) {
    if (name == kKindNames[k]) return static_cast<LayerKind>(k);
  }
  throw ValueError("unknown layer kind '" + name + "'");
}

LayerSpec dense_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t padding) {
  return LayerSpec{LayerKind::kDenseConv, kernel, stride, padding, in, out, 1, 0};
}

LayerSpec depthwise_conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                         std::size_t padding) {
  return LayerSpec{LayerKind::kDepthwiseConv, kernel, stride, padding, channels, channels, 1, 0};
}

LayerSpec pointwise_conv(std::size_t in, std::size_t out) {
  return LayerSpec{LayerKind::kPointwiseConv, 1, 1, 0, in, out, 1, 0};
}

LayerSpec relu6_layer(std::size_t channels) {
  return LayerSpec{LayerKind::kRelu6, 1, 1, 0, channels, channels, 1, 0};
}

LayerSpec inverted_residual(std::size_t in, std::size_t out, std::size_t expand_ratio,
                            std::size_t stride) {
  return LayerSpec{LayerKind::kInvertedResidual, 3, stride, 1, in, out, expand_ratio,
                   in * expand_ratio};
}

std::vector<ConvSlot> conv_slots(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::kRelu6:
      return {};
    case LayerKind::kDenseConv:
    case LayerKind::kPointwiseConv:
      return {ConvSlot{false, layer.kernel, layer.stride, layer.padding, layer.in_channels,
                       layer.out_channels}};
    case LayerKind::kDepthwiseConv:
      return {ConvSlot{true, layer.kernel, layer.stride, layer.padding, layer.in_channels,
                       layer.out_channels}};
    case LayerKind::kInvertedResidual:
      return {
          ConvSlot{false, 1, 1, 0, layer.in_channels, layer.hidden_channels},
          ConvSlot{true, layer.kernel, layer.stride, layer.padding, layer.hidden_channels,
                   layer.hidden_channels},
          ConvSlot{false, 1, 1, 0, layer.hidden_channels, layer.out_channels},
      };
  }
  return {};
}

void NetworkSpec::validate() const {
  const std::size_t n = layers.size();
  if (backbone.size() == 0 || cls_head.size() == 0 || reg_head.size() == 0) {
    throw ShapeError("network spec: every subgraph must be non-empty");
  }
  if (backbone.begin != 0 || cls_head.begin != backbone.end || reg_head.begin != cls_head.end ||
      reg_head.end != n) {
    throw ShapeError("network spec: subgraphs must tile the layer list as backbone, cls, reg");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = layers[i];
    if (l.in_channels == 0 || l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
      throw ShapeError(layer_label(i, l) + ": zero extent");
    }
    const bool channelwise = l.kind == LayerKind::kRelu6 || l.kind == LayerKind::kDepthwiseConv;
    if (channelwise && l.in_channels != l.out_channels) {
      throw ShapeError(layer_label(i, l) + ": in and out channels must match");
    }
    if (l.kind == LayerKind::kPointwiseConv && (l.kernel != 1 || l.stride != 1 || l.padding != 0)) {
      throw ShapeError(layer_label(i, l) + ": pointwise conv must be 1x1, stride 1, no padding");
    }
    if (l.kind == LayerKind::kInvertedResidual && (l.hidden_channels == 0 || l.expand_ratio == 0)) {
      throw ShapeError(layer_label(i, l) + ": inverted residual needs a positive width");
    }
  }
  auto chain = [&](LayerRange r, std::size_t in, const char* name) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      if (layers[i].in_channels != in) {
        throw ShapeError(std::string(name) + ": " + layer_label(i, layers[i]) + " expects " +
                         std::to_string(layers[i].in_channels) + " channels, receives " +
                         std::to_string(in));
      }
      in = layers[i].out_channels;
    }
    return in;
  };
  chain(backbone, 3, "backbone");
  if (chain(cls_head, 1, "cls_head") != 1) throw ShapeError("cls_head must emit 1 channel");
  if (chain(reg_head, 1, "reg_head") != 4) throw ShapeError("reg_head must emit 4 channels");

  const std::size_t tf = range_output_extent(*this, backbone, template_size);
  const std::size_t sf = range_output_extent(*this, backbone, search_size);
  if (tf > sf) throw ShapeError("template feature larger than search feature");
  const std::size_t r = sf - tf + 1;
  if (range_output_extent(*this, cls_head, r) != r || range_output_extent(*this, reg_head, r) != r) {
    throw ShapeError("heads must preserve the response extent");
  }
}

std::size_t NetworkSpec::feature_channels() const { return layers[backbone.end - 1].out_channels; }

std::size_t NetworkSpec::stride() const {
  std::size_t s = 1;
  for (std::size_t i = backbone.begin; i < backbone.end; ++i) s *= layers[i].stride;
  return s;
}

NetworkSpec build_default_spec(ModelScale scale, std::size_t width) {
  if (width == 0) throw ValueError("width multiplier must be positive");
  NetworkSpec spec;
  std::size_t head_width;
  if (scale == ModelScale::kDesk) {
    spec.template_size = 32;
    spec.search_size = 64;
    const std::size_t c = 8 * width;
    spec.layers = {
        dense_conv(3, c, 3, 2, 1),
        relu6_layer(c),
        inverted_residual(c, c, 4, 2),
        inverted_residual(c, c, 4, 1),
    };
    head_width = 8 * width;
  } else {
    spec.template_size = 127;
    spec.search_size = 255;
    const std::size_t w = width;
    spec.layers = {
        dense_conv(3, 32 * w, 3, 2, 1),
        relu6_layer(32 * w),
        inverted_residual(32 * w, 16 * w, 1, 1),
        inverted_residual(16 * w, 24 * w, 6, 2),
        inverted_residual(24 * w, 24 * w, 6, 1),
        inverted_residual(24 * w, 32 * w, 6, 2),
        inverted_residual(32 * w, 32 * w, 6, 1),
    };
    head_width = 16 * w;
  }
  spec.backbone = {0, spec.layers.size()};
  for (std::size_t outputs : {std::size_t{1}, std::size_t{4}}) {
    const std::size_t begin = spec.layers.size();
    spec.layers.push_back(depthwise_conv(1, 3, 1, 1));
    spec.layers.push_back(pointwise_conv(1, head_width));
    spec.layers.push_back(relu6_layer(head_width));
    spec.layers.push_back(depthwise_conv(head_width, 3, 1, 1));
    spec.layers.push_back(pointwise_conv(head_width, outputs));
    (outputs == 1 ? spec.cls_head : spec.reg_head) = {begin, spec.layers.size()};
  }
  spec.validate();
  return spec;
}

ResponseGeometry response_geometry(const NetworkSpec& spec) {
  const std::size_t tf = range_output_extent(spec, spec.backbone, spec.template_size);
  const std::size_t sf = range_output_extent(spec, spec.backbone, spec.search_size);
  if (tf > sf) throw ShapeError("template feature larger than search feature");
  return ResponseGeometry{spec.template_size, spec.search_size, spec.stride(), sf - tf + 1};
}

Weights init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto geom = response_geometry(spec);
  // Response magnitude grows with the number of correlated feature elements.
  const std::size_t tf = (geom.template_size + geom.stride - 1) / geom.stride;
  const double response_fan_in = static_cast<double>(spec.feature_channels() * tf * tf);

  Weights w;
  w.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const auto slots = conv_slots(layer);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const ConvSlot& slot = slots[s];
      const Shape ws = slot.weight_shape();
      const double fan_in = static_cast<double>(ws.c * ws.h * ws.w);
      double stddev = std::sqrt(2.0 / fan_in);
      const bool linear_projection = layer.kind == LayerKind::kInvertedResidual && s == 2;
      if (linear_projection) stddev = std::sqrt(1.0 / fan_in);
      const bool head_entry = i == spec.cls_head.begin || i == spec.reg_head.begin;
      if (head_entry) stddev = 1.0 / (fan_in * response_fan_in);
      const bool head_exit = i + 1 == spec.cls_head.end || i + 1 == spec.reg_head.end;
      if (head_exit) stddev = 0.1 * std::sqrt(1.0 / fan_in);
      Tensor weight(ws);
      for (auto& v : weight.data()) v = static_cast<float>(stddev * rng.normal());
      // Zero-mean stem filters: flat image regions map to the bias.
      if (i == 0) {
        const std::size_t per = weight.size() / ws.n;
        for (std::size_t o = 0; o < ws.n; ++o) {
          double mean = 0;
          for (std::size_t e = 0; e < per; ++e) mean += weight[o * per + e];
          mean /= static_cast<double>(per);
          for (std::size_t e = 0; e < per; ++e) weight[o * per + e] -= static_cast<float>(mean);
        }
      }
      w.layers[i].convs.push_back(ConvParams{std::move(weight), Tensor(Shape{1, ws.n, 1, 1})});
    }
  }
  return w;
}

void validate_weights(const NetworkSpec& spec, const Weights& weights) {
  if (weights.layers.size() != spec.layers.size()) {
    throw ShapeError("weights cover " + std::to_string(weights.layers.size()) +
                     " layers, spec has " + std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto slots = conv_slots(spec.layers[i]);
    const auto& convs = weights.layers[i].convs;
    if (convs.size() != slots.size()) {
      throw ShapeError(layer_label(i, spec.layers[i]) + ": expected " +
                       std::to_string(slots.size()) + " parameter blobs, got " +
                       std::to_string(convs.size()));
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const Shape want = slots[s].weight_shape();
      if (convs[s].weight.shape() != want) {
        throw ShapeError(layer_label(i, spec.layers[i]) + " conv " + std::to_string(s) +
                         ": weight " + convs[s].weight.shape().str() + ", expected " + want.str());
      }
      if (convs[s].bias.shape() != Shape{1, want.n, 1, 1}) {
        throw ShapeError(layer_label(i, spec.layers[i]) + " conv " + std::to_string(s) +
                         ": bias " + convs[s].bias.shape().str());
      }
    }
  }
}

std::size_t parameter_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& layer : spec.layers) {
    for (const auto& slot : conv_slots(layer)) total += slot.weight_shape().count() + slot.out_channels;
  }
  return total;
}

Tensor forward_layers(const NetworkSpec& spec, const Weights& weights, LayerRange range,
                      const Tensor& input, const ActivationHook& hook) {
  EvalBackend backend{weights, hook};
  return run_layers(spec, range, input, backend);
}

Tensor forward_backbone(const NetworkSpec& spec, const Weights& weights, const Tensor& patch,
                        const ActivationHook& hook) {
  const Shape& s = patch.shape();
  if (s != Shape{1, 3, spec.template_size, spec.template_size} &&
      s != Shape{1, 3, spec.search_size, spec.search_size}) {
    throw ShapeError("backbone input must be 1x3x" + std::to_string(spec.template_size) + "x" +
                     std::to_string(spec.template_size) + " or 1x3x" +
                     std::to_string(spec.search_size) + "x" + std::to_string(spec.search_size) +
                     ", got " + s.str());
  }
  return forward_layers(spec, weights, spec.backbone, patch, hook);
}

HeadMaps respond(const NetworkSpec& spec, const Weights& weights, const Tensor& template_feature,
                 const Tensor& search_patch, const ActivationHook& hook) {
  require_patch(search_patch.shape(), spec.search_size, "search");
  EvalBackend backend{weights, hook};
  Tensor sf = run_layers(spec, spec.backbone, search_patch, backend);
  Tensor response = backend.correlate(sf, template_feature);
  backend.tap(response, TapId::kCorrelation, TapId::kOutput);
  HeadMaps out;
  out.cls = run_layers(spec, spec.cls_head, response, backend);
  out.reg = run_layers(spec, spec.reg_head, response, backend);
  return out;
}

HeadMaps model_forward(const NetworkSpec& spec, const Weights& weights,
                       const Tensor& template_patch, const Tensor& search_patch,
                       const ActivationHook& hook) {
  require_patch(template_patch.shape(), spec.template_size, "template");
  require_patch(search_patch.shape(), spec.search_size, "search");
  const Tensor tf = forward_layers(spec, weights, spec.backbone, template_patch, hook);
  return respond(spec, weights, tf, search_patch, hook);
}

Tensor inverted_residual_forward(const Tensor& input, const LayerWeights& block,
                                 std::size_t stride) {
  if (block.convs.size() != 3) throw ShapeError("inverted residual needs three convolutions");
  const auto& e = block.convs[0];
  const auto& d = block.convs[1];
  const auto& p = block.convs[2];
  const Shape& es = e.weight.shape();
  const Shape& ds = d.weight.shape();
  const Shape& ps = p.weight.shape();
  if (es.h != 1 || es.w != 1 || ps.h != 1 || ps.w != 1 || ds.c != 1 || ds.n != es.n ||
      ps.c != es.n || es.c != input.shape().c) {
    throw ShapeError("inverted residual: inconsistent block geometry for input " +
                     input.shape().str());
  }
  LayerSpec layer{LayerKind::kInvertedResidual, ds.h, stride, ds.h / 2, es.c, ps.n,
                  std::max<std::size_t>(1, es.n / es.c), es.n};
  NetworkSpec one;
  one.layers = {layer};
  Weights w;
  w.layers = {block};
  return forward_layers(one, w, LayerRange{0, 1}, input);
}

WeightIds record_weights(Tape& tape, const Weights& weights) {
  WeightIds ids;
  ids.layers.resize(weights.layers.size());
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    for (const auto& conv : weights.layers[i].convs) {
      ids.layers[i].push_back({tape.parameter(conv.weight), tape.parameter(conv.bias)});
    }
  }
  return ids;
}

ValueId forward_backbone(Tape& tape, const NetworkSpec& spec, const WeightIds& ids,
                         ValueId patch) {
  TapeBackend backend{tape, ids};
  return run_layers(spec, spec.backbone, patch, backend);
}

HeadIds model_forward(Tape& tape, const NetworkSpec& spec, const WeightIds& ids,
                      ValueId template_patch, ValueId search_patch) {
  require_patch(tape.value(template_patch).shape(), spec.template_size, "template");
  require_patch(tape.value(search_patch).shape(), spec.search_size, "search");
  TapeBackend backend{tape, ids};
  const ValueId tf = run_layers(spec, spec.backbone, template_patch, backend);
  const ValueId sf = run_layers(spec, spec.backbone, search_patch, backend);
  const ValueId response = backend.correlate(sf, tf);
  return HeadIds{run_layers(spec, spec.cls_head, response, backend),
                 run_layers(spec, spec.reg_head, response, backend)};
}

}  // namespace siamlite
