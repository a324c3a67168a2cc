#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "siamlite/tape.hpp"
#include "siamlite/tensor.hpp"

namespace siamlite {

enum class LayerKind : std::uint8_t {
  kDenseConv,
  kDepthwiseConv,
  kPointwiseConv,
  kRelu6,
  kInvertedResidual,
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One entry of the layer list. Inverted-residual blocks carry their expanded
/// width explicitly because pruning can shrink it below in_channels * expand_ratio.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu6;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t expand_ratio = 1;
  std::size_t hidden_channels = 0;

  bool has_skip() const {
    return kind == LayerKind::kInvertedResidual && stride == 1 && in_channels == out_channels;
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec dense_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t padding);
LayerSpec depthwise_conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                         std::size_t padding);
LayerSpec pointwise_conv(std::size_t in, std::size_t out);
LayerSpec relu6_layer(std::size_t channels);
LayerSpec inverted_residual(std::size_t in, std::size_t out, std::size_t expand_ratio,
                            std::size_t stride);

/// Half-open range of layer indices.
struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  std::size_t size() const { return end - begin; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// Flat layer list plus the three named subgraphs. The backbone consumes RGB
/// patches; both heads consume the 1-channel correlation response.
struct NetworkSpec {
  std::size_t template_size = 0;
  std::size_t search_size = 0;
  std::vector<LayerSpec> layers;
  LayerRange backbone;
  LayerRange cls_head;
  LayerRange reg_head;

  /// Throws ShapeError if any structural invariant fails.
  void validate() const;
  std::size_t feature_channels() const;
  /// Product of backbone strides.
  std::size_t stride() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

enum class ModelScale { kDesk, kPaper };

/// Default topologies. `width` multiplies every hidden channel count; the
/// distillation teacher is the desk topology at width 4.
NetworkSpec build_default_spec(ModelScale scale, std::size_t width = 1);

/// Spatial extents flowing through the network for a given spec.
struct ResponseGeometry {
  std::size_t template_size = 0;
  std::size_t search_size = 0;
  std::size_t stride = 0;
  std::size_t extent = 0;  // response map is extent x extent

  /// Search-patch coordinate of a response cell's center.
  double cell_center(std::size_t index) const {
    return static_cast<double>(index * stride) + static_cast<double>(template_size) / 2.0;
  }
};

ResponseGeometry response_geometry(const NetworkSpec& spec);

/// Geometry of one convolution inside a layer.
struct ConvSlot {
  bool depthwise = false;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  Shape weight_shape() const {
    return depthwise ? Shape{out_channels, 1, kernel, kernel}
                     : Shape{out_channels, in_channels, kernel, kernel};
  }
};

/// Convolutions a layer owns, in execution order: one for plain convs, three
/// (expand, depthwise, project) for inverted residuals, none for relu6.
std::vector<ConvSlot> conv_slots(const LayerSpec& layer);

struct ConvParams {
  Tensor weight;
  Tensor bias;  // 1 x Cout x 1 x 1
  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct LayerWeights {
  std::vector<ConvParams> convs;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Parameters indexed by layer, then by conv slot.
struct Weights {
  std::vector<LayerWeights> layers;
  friend bool operator==(const Weights&, const Weights&) = default;
};

/// He-style initialization with zero biases and zero-mean stem filters.
Weights init_weights(const NetworkSpec& spec, std::uint64_t seed);
void validate_weights(const NetworkSpec& spec, const Weights& weights);
std::size_t parameter_count(const NetworkSpec& spec);

struct Model {
  NetworkSpec spec;
  Weights weights;
  friend bool operator==(const Model&, const Model&) = default;
};

/// Activation observation points, used by calibration and simulated quantization.
struct TapId {
  static constexpr int kCorrelation = -1;
  enum Point : int { kOutput = 0, kExpand = 1, kDepthwise = 2 };

  int layer = 0;
  int point = kOutput;
  friend auto operator<=>(const TapId&, const TapId&) = default;
};

/// Invoked on every tapped activation; may rewrite it in place.
using ActivationHook = std::function<void(const TapId&, Tensor&)>;

struct HeadMaps {
  Tensor cls;  // 1 x 1 x R x R logits
  Tensor reg;  // 1 x 4 x R x R: dx, dy, log w-scale, log h-scale
};

/// Runs the backbone on a template- or search-sized 1 x 3 x S x S patch.
Tensor forward_backbone(const NetworkSpec& spec, const Weights& weights, const Tensor& patch,
                        const ActivationHook& hook = {});
/// Runs an arbitrary layer range. Exposed for tests and compression.
Tensor forward_layers(const NetworkSpec& spec, const Weights& weights, LayerRange range,
                      const Tensor& input, const ActivationHook& hook = {});
/// Cross-correlation plus both heads, from a frozen template feature.
HeadMaps respond(const NetworkSpec& spec, const Weights& weights, const Tensor& template_feature,
                 const Tensor& search_patch, const ActivationHook& hook = {});
HeadMaps model_forward(const NetworkSpec& spec, const Weights& weights,
                       const Tensor& template_patch, const Tensor& search_patch,
                       const ActivationHook& hook = {});

/// Stand-alone inverted residual with explicit block weights (expand,
/// depthwise, project).
Tensor inverted_residual_forward(const Tensor& input, const LayerWeights& block,
                                 std::size_t stride);

/// Tape-recorded weights, same indexing as Weights.
struct WeightIds {
  struct Conv {
    ValueId weight;
    ValueId bias;
  };
  std::vector<std::vector<Conv>> layers;
};

WeightIds record_weights(Tape& tape, const Weights& weights);

struct HeadIds {
  ValueId cls;
  ValueId reg;
};

ValueId forward_backbone(Tape& tape, const NetworkSpec& spec, const WeightIds& ids,
                         ValueId patch);
HeadIds model_forward(Tape& tape, const NetworkSpec& spec, const WeightIds& ids,
                      ValueId template_patch, ValueId search_patch);

}  // namespace siamlite
