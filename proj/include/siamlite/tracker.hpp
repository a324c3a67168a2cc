#pragma once

#include <memory>
#include <optional>
#include <utility>

#include "siamlite/image.hpp"
#include "siamlite/network.hpp"

namespace siamlite {

struct TrackerConfig {
  double context_factor = 2.0;  // search side = context_factor * max(w, h)
  double window_weight = 0.3;   // gamma
  double size_smoothing = 0.7;  // beta, fraction of the previous size kept

  void validate() const;
};

/// What the tracker needs from a network: embed a patch once, then score a
/// search patch against the stored embedding.
class SiameseModel {
 public:
  virtual ~SiameseModel() = default;
  virtual const NetworkSpec& spec() const = 0;
  virtual Tensor embed(const Tensor& patch) const = 0;
  virtual HeadMaps respond(const Tensor& template_feature, const Tensor& search_patch) const = 0;
};

class FloatModel final : public SiameseModel {
 public:
  explicit FloatModel(Model model);
  const NetworkSpec& spec() const override { return model_.spec; }
  const Model& model() const { return model_; }
  Tensor embed(const Tensor& patch) const override;
  HeadMaps respond(const Tensor& template_feature, const Tensor& search_patch) const override;

 private:
  Model model_;
};

struct TrackerState {
  Tensor template_feature;
  BBox bbox;
  Tensor window;  // 1 x 1 x R x R Hann window
};

/// Side of the template crop: the search context scaled by T/S, so both crops
/// share one pixel scale.
double template_context(const NetworkSpec& spec, const TrackerConfig& config);

/// Outer product of two symmetric Hann windows; 1 at the center, 0 on the rim.
Tensor hann_window(std::size_t extent);

TrackerState init_tracker(const SiameseModel& model, const Image& frame, const BBox& bbox,
                          const TrackerConfig& config);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Decodes the regression output at `cell` into frame coordinates, relative to
/// the box the search crop was taken around. No size smoothing is applied.
BBox decode_bbox(Cell cell, const Tensor& reg_map, const TrackerState& state,
                 const TrackerConfig& config, const ResponseGeometry& geometry);

/// (1 - gamma) * sigmoid(cls) + gamma * window.
Tensor penalized_score(const Tensor& cls_map, const Tensor& window, double window_weight);

/// First maximum in row-major order.
Cell argmax_cell(const Tensor& map);

struct TrackResult {
  TrackerState state;
  BBox bbox;
};

/// One search crop, one network evaluation, one decoded box. The returned box
/// is clamped to the frame so it always has positive finite extents.
TrackResult track_frame(const TrackerState& state, const SiameseModel& model, const Image& frame,
                        const TrackerConfig& config);

/// Any single-object tracker the evaluation harness can drive.
class SequenceTracker {
 public:
  virtual ~SequenceTracker() = default;
  virtual void init(const Image& frame, const BBox& bbox) = 0;
  virtual BBox update(const Image& frame) = 0;
};

class SiameseTracker final : public SequenceTracker {
 public:
  SiameseTracker(const SiameseModel& model, TrackerConfig config);
  void init(const Image& frame, const BBox& bbox) override;
  BBox update(const Image& frame) override;
  const TrackerState& state() const;

 private:
  const SiameseModel& model_;
  TrackerConfig config_;
  std::optional<TrackerState> state_;
};

}  // namespace siamlite
