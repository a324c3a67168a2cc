#include "siamlite/flops.hpp"

#include "siamlite/ops.hpp"

namespace siamlite {

std::uint64_t dense_conv_flops(std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t out_h, std::size_t out_w,
                               bool bias) {
  const std::uint64_t outputs = std::uint64_t{out_channels} * out_h * out_w;
  return 2 * outputs * in_channels * kernel * kernel + (bias ? outputs : 0);
}

std::uint64_t depthwise_conv_flops(std::size_t channels, std::size_t kernel, std::size_t out_h,
                                   std::size_t out_w, bool bias) {
  const std::uint64_t outputs = std::uint64_t{channels} * out_h * out_w;
  return 2 * outputs * kernel * kernel + (bias ? outputs : 0);
}

namespace {

struct LayerCount {
  std::uint64_t flops = 0;
  std::size_t out_extent = 0;
};

LayerCount count_layer(const LayerSpec& layer, std::size_t in) {
  LayerCount c{0, in};
  for (const ConvSlot& slot : conv_slots(layer)) {
    const std::size_t out = conv_output_extent(c.out_extent, slot.kernel, slot.stride, slot.padding);
    c.flops += slot.depthwise ? depthwise_conv_flops(slot.out_channels, slot.kernel, out, out)
                              : dense_conv_flops(slot.in_channels, slot.out_channels, slot.kernel,
                                                 out, out);
    c.out_extent = out;
  }
  return c;
}

std::uint64_t layer_params(const LayerSpec& layer) {
  std::uint64_t p = 0;
  for (const ConvSlot& slot : conv_slots(layer)) p += slot.weight_shape().count() + slot.out_channels;
  return p;
}

}  // namespace

FlopsReport count_flops(const NetworkSpec& spec, std::size_t template_size,
                        std::size_t search_size) {
  NetworkSpec sized = spec;
  sized.template_size = template_size;
  sized.search_size = search_size;
  sized.validate();

  FlopsReport report;
  auto add = [&](int index, std::string kind, std::uint64_t flops, std::uint64_t params) {
    report.layers.push_back(LayerFlops{index, std::move(kind), flops, params});
    report.total += flops;
    report.parameters += params;
  };

  std::size_t t = template_size;
  std::size_t s = search_size;
  for (std::size_t i = sized.backbone.begin; i < sized.backbone.end; ++i) {
    const LayerSpec& layer = sized.layers[i];
    const LayerCount ct = count_layer(layer, t);
    const LayerCount cs = count_layer(layer, s);
    add(static_cast<int>(i), to_string(layer.kind), ct.flops + cs.flops, layer_params(layer));
    t = ct.out_extent;
    s = cs.out_extent;
  }

  const std::size_t r = s - t + 1;
  add(-1, "xcorr", dense_conv_flops(sized.feature_channels(), 1, t, r, r, false), 0);

  for (LayerRange head : {sized.cls_head, sized.reg_head}) {
    std::size_t e = r;
    for (std::size_t i = head.begin; i < head.end; ++i) {
      const LayerSpec& layer = sized.layers[i];
      const LayerCount c = count_layer(layer, e);
      add(static_cast<int>(i), to_string(layer.kind), c.flops, layer_params(layer));
      e = c.out_extent;
    }
  }
  return report;
}

FlopsReport count_flops(const NetworkSpec& spec) {
  return count_flops(spec, spec.template_size, spec.search_size);
}

std::string FlopsReport::csv() const {
  std::string out = "layer_index,kind,flops,params\n";
  for (const auto& l : layers) {
    out += std::to_string(l.layer_index) + "," + l.kind + "," + std::to_string(l.flops) + "," +
           std::to_string(l.params) + "\n";
  }
  out += "# total," + std::to_string(total) + "," + std::to_string(parameters) + "\n";
  return out;
}

}  // namespace siamlite
