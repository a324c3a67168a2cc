#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "siamlite/network.hpp"

namespace siamlite {

/// FLOPs are 2 x multiply-accumulates plus one per bias add. Activations and
/// residual adds are not counted.
struct LayerFlops {
  int layer_index = 0;  // -1 for the cross-correlation
  std::string kind;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

struct FlopsReport {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
  std::uint64_t parameters = 0;

  /// `layer_index,kind,flops,params` rows followed by a `# total` line.
  std::string csv() const;
};

std::uint64_t dense_conv_flops(std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t out_h, std::size_t out_w,
                               bool bias = true);
std::uint64_t depthwise_conv_flops(std::size_t channels, std::size_t kernel, std::size_t out_h,
                                   std::size_t out_w, bool bias = true);

/// One tracking step with both branches: backbone rows cover the template and
/// the search patch, then the correlation, then both heads on the response.
FlopsReport count_flops(const NetworkSpec& spec, std::size_t template_size,
                        std::size_t search_size);
FlopsReport count_flops(const NetworkSpec& spec);

}  // namespace siamlite
