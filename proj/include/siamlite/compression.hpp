#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "siamlite/network.hpp"
#include "siamlite/tracker.hpp"
#include "siamlite/training.hpp"

namespace siamlite {

// Pruning.

/// L1 norm of every output filter (dimension 0) of a conv weight.
std::vector<double> rank_filters(const Tensor& weight);

/// A backbone filter group whose size can shrink without touching a residual
/// sum or the correlation input. Head channels are never pruned: they carry
/// the single-channel response and cost a few percent of the FLOPs.
struct PrunableUnit {
  enum class Kind { kLayerOutput, kHidden };
  std::size_t layer = 0;
  Kind kind = Kind::kLayerOutput;
  std::size_t channels = 0;
};

std::vector<PrunableUnit> prunable_units(const NetworkSpec& spec);

struct PruneLayerReport {
  std::size_t layer = 0;
  PrunableUnit::Kind kind = PrunableUnit::Kind::kLayerOutput;
  std::size_t original = 0;
  std::vector<std::size_t> kept;  // strictly increasing
  std::vector<double> scores;     // L1 per original filter
};

struct PruneReport {
  std::vector<PruneLayerReport> layers;
};

struct PruneResult {
  Model model;
  PruneReport report;
  std::vector<LossRecord> fine_tune_history;
};

/// Drops the floor(fraction * C) lowest-L1 filters of every prunable unit
/// (ties broken toward the lower index) and removes the matching input
/// slices downstream. A removed filter's constant output is folded into the
/// consumer's bias; the fold is exact away from zero-padded borders, and
/// filters with zero weights and bias vanish without changing any output.
PruneResult prune_filters(const Model& model, double fraction);
/// Same, restricted to a subset of prunable_units().
PruneResult prune_filters(const Model& model, double fraction,
                          const std::vector<PrunableUnit>& units);

/// prune_filters followed by fine_tune_steps of training on `train_inputs`.
PruneResult prune_network(const Model& model, double fraction, std::size_t fine_tune_steps,
                          const std::vector<Sequence>& train_inputs,
                          const TrainConfig& config = {}, const SampleConfig& sampling = {});

// Quantization.

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;

  std::int32_t qmax() const { return (1 << bits) - 1; }
  std::uint32_t quantize(double x) const;
  double dequantize(std::uint32_t code) const;
  double fake_quantize(double x) const { return dequantize(quantize(x)); }
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Affine parameters for an observed [lo, hi]. A constant range takes scale
/// max(|v|, 1) / qmax; otherwise the range is first widened to contain 0 so
/// zero is exactly representable. zero_point rounds half away from zero. The
/// scale is rounded up to float, the precision the model file stores.
QuantParams quant_params_for_range(double lo, double hi, int bits = 8);

struct ValueRange {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void observe(const Tensor& t);
  void merge(const ValueRange& other);
  bool empty() const { return lo > hi; }
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

struct PatchPair {
  Tensor template_patch;
  Tensor search_patch;
};

std::vector<PatchPair> patch_pairs(const std::vector<PairSample>& samples);

/// True when the tap is a conv output consumed directly by a relu6 layer. Such
/// outputs are calibrated on their clipped range, as a fused conv+relu6
/// kernel would emit them.
bool feeds_relu6(const NetworkSpec& spec, const TapId& id);

/// Running min/max of every tapped activation over float forwards.
std::map<TapId, ValueRange> observe_activations(const Model& model,
                                                const std::vector<PatchPair>& calibration);

/// Every tap point a forward pass visits.
std::vector<TapId> activation_taps(const NetworkSpec& spec);

struct QuantPlan {
  int bits = 8;
  std::vector<std::vector<QuantParams>> weights;  // [layer][conv slot]
  std::map<TapId, QuantParams> activations;
};

/// Weight params from each weight tensor's range, activation params from
/// float forwards over the calibration set.
QuantPlan calibrate(const Model& model, const std::vector<PatchPair>& calibration, int bits = 8);

struct QuantizedConv {
  Shape shape;
  std::vector<std::uint16_t> codes;
  QuantParams params;
  Tensor bias;  // kept in float
  friend bool operator==(const QuantizedConv&, const QuantizedConv&) = default;
};

struct QuantizedNetwork {
  NetworkSpec spec;
  int bits = 8;
  std::vector<std::vector<QuantizedConv>> layers;
  std::map<TapId, QuantParams> activations;

  void validate() const;
  Weights dequantized_weights() const;
  friend bool operator==(const QuantizedNetwork&, const QuantizedNetwork&) = default;
};

Tensor quantize_dequantize(const Tensor& t, const QuantParams& params);

QuantizedNetwork quantize_network(const Model& model, const QuantPlan& plan);

/// Simulated quantized inference: dequantized weights, real arithmetic, and
/// fake-quantized activations at every tap.
HeadMaps quantized_forward(const QuantizedNetwork& qnet, const Tensor& template_patch,
                           const Tensor& search_patch);

class QuantizedModel final : public SiameseModel {
 public:
  explicit QuantizedModel(QuantizedNetwork qnet);
  QuantizedModel(const QuantizedModel&) = delete;
  QuantizedModel& operator=(const QuantizedModel&) = delete;
  const NetworkSpec& spec() const override { return qnet_.spec; }
  const QuantizedNetwork& network() const { return qnet_; }
  Tensor embed(const Tensor& patch) const override;
  HeadMaps respond(const Tensor& template_feature, const Tensor& search_patch) const override;

 private:
  QuantizedNetwork qnet_;
  Weights weights_;
  ActivationHook hook_;
};

}  // namespace siamlite
