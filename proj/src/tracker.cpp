#include "siamlite/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace siamlite {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

BBox clamp_to_frame(BBox b, const Image& frame, const BBox& fallback) {
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy)) {
    b.cx = fallback.cx;
    b.cy = fallback.cy;
  }
  if (!std::isfinite(b.w) || !std::isfinite(b.h)) {
    b.w = fallback.w;
    b.h = fallback.h;
  }
  const double fw = static_cast<double>(frame.width);
  const double fh = static_cast<double>(frame.height);
  b.w = std::clamp(b.w, 1.0, std::max(1.0, fw));
  b.h = std::clamp(b.h, 1.0, std::max(1.0, fh));
  b.cx = std::clamp(b.cx, 0.0, fw);
  b.cy = std::clamp(b.cy, 0.0, fh);
  return b;
}

}  // namespace

void TrackerConfig::validate() const {
  if (!(context_factor > 0) || !std::isfinite(context_factor)) {
    throw ValueError("tracker: context_factor must be positive");
  }
  if (!(window_weight >= 0 && window_weight <= 1)) {
    throw ValueError("tracker: window_weight must lie in [0, 1]");
  }
  if (!(size_smoothing >= 0 && size_smoothing <= 1)) {
    throw ValueError("tracker: size_smoothing must lie in [0, 1]");
  }
}

FloatModel::FloatModel(Model model) : model_(std::move(model)) {
  model_.spec.validate();
  validate_weights(model_.spec, model_.weights);
}

Tensor FloatModel::embed(const Tensor& patch) const {
  return forward_backbone(model_.spec, model_.weights, patch);
}

HeadMaps FloatModel::respond(const Tensor& template_feature, const Tensor& search_patch) const {
  return siamlite::respond(model_.spec, model_.weights, template_feature, search_patch);
}

double template_context(const NetworkSpec& spec, const TrackerConfig& config) {
  return config.context_factor * static_cast<double>(spec.template_size) /
         static_cast<double>(spec.search_size);
}

Tensor hann_window(std::size_t extent) {
  if (extent == 0) throw ShapeError("hann_window: empty extent");
  std::vector<double> profile(extent, 1.0);
  if (extent > 1) {
    for (std::size_t i = 0; i < extent; ++i) {
      profile[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(extent - 1)));
    }
  }
  Tensor window(Shape{1, 1, extent, extent});
  for (std::size_t y = 0; y < extent; ++y) {
    for (std::size_t x = 0; x < extent; ++x) {
      window.at(0, 0, y, x) = static_cast<float>(profile[y] * profile[x]);
    }
  }
  return window;
}

TrackerState init_tracker(const SiameseModel& model, const Image& frame, const BBox& bbox,
                          const TrackerConfig& config) {
  require_valid(bbox, "init_tracker");
  config.validate();
  const NetworkSpec& spec = model.spec();
  const Tensor patch =
      crop_patch(frame, bbox, template_context(spec, config), spec.template_size);
  return TrackerState{model.embed(patch), bbox, hann_window(response_geometry(spec).extent)};
}

BBox decode_bbox(Cell cell, const Tensor& reg_map, const TrackerState& state,
                 const TrackerConfig& config, const ResponseGeometry& geometry) {
  const Shape& rs = reg_map.shape();
  if (rs.n != 1 || rs.c != 4) throw ShapeError("decode_bbox: reg map must be 1x4xRxR");
  if (cell.row >= rs.h || cell.col >= rs.w) {
    throw ValueError("decode_bbox: cell (" + std::to_string(cell.row) + "," +
                     std::to_string(cell.col) + ") outside " + rs.str());
  }
  const BBox& prev = state.bbox;
  const double side = config.context_factor * std::max(prev.w, prev.h);
  const double scale = side / static_cast<double>(geometry.search_size);
  const double half = static_cast<double>(geometry.search_size) / 2.0;
  const double stride = static_cast<double>(geometry.stride);
  const double dx = reg_map.at(0, 0, cell.row, cell.col);
  const double dy = reg_map.at(0, 1, cell.row, cell.col);
  const double dlw = std::clamp(static_cast<double>(reg_map.at(0, 2, cell.row, cell.col)), -1.0, 1.0);
  const double dlh = std::clamp(static_cast<double>(reg_map.at(0, 3, cell.row, cell.col)), -1.0, 1.0);
  const double sx = geometry.cell_center(cell.col) + dx * stride;
  const double sy = geometry.cell_center(cell.row) + dy * stride;
  return BBox{prev.cx + (sx - half) * scale, prev.cy + (sy - half) * scale, prev.w * std::exp(dlw),
              prev.h * std::exp(dlh)};
}

Tensor penalized_score(const Tensor& cls_map, const Tensor& window, double window_weight) {
  if (cls_map.shape() != window.shape()) {
    throw ShapeError("penalized_score: " + cls_map.shape().str() + " vs " + window.shape().str());
  }
  Tensor score(cls_map.shape());
  for (std::size_t i = 0; i < score.size(); ++i) {
    score[i] = static_cast<float>((1.0 - window_weight) * sigmoid(cls_map[i]) +
                                  window_weight * window[i]);
  }
  return score;
}

Cell argmax_cell(const Tensor& map) {
  const Shape& s = map.shape();
  if (s.count() == 0) throw ShapeError("argmax_cell: empty map");
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.plane(); ++i) {
    if (map[i] > map[best]) best = i;
  }
  return Cell{best / s.w, best % s.w};
}

TrackResult track_frame(const TrackerState& state, const SiameseModel& model, const Image& frame,
                        const TrackerConfig& config) {
  const NetworkSpec& spec = model.spec();
  const Tensor search = crop_patch(frame, state.bbox, config.context_factor, spec.search_size);
  const HeadMaps maps = model.respond(state.template_feature, search);
  const Cell cell = argmax_cell(penalized_score(maps.cls, state.window, config.window_weight));
  const BBox decoded = decode_bbox(cell, maps.reg, state, config, response_geometry(spec));
  const double beta = config.size_smoothing;
  BBox next{decoded.cx, decoded.cy, beta * state.bbox.w + (1 - beta) * decoded.w,
            beta * state.bbox.h + (1 - beta) * decoded.h};
  next = clamp_to_frame(next, frame, state.bbox);
  TrackResult result{state, next};
  result.state.bbox = next;
  return result;
}

SiameseTracker::SiameseTracker(const SiameseModel& model, TrackerConfig config)
    : model_(model), config_(config) {
  config_.validate();
}

void SiameseTracker::init(const Image& frame, const BBox& bbox) {
  state_ = init_tracker(model_, frame, bbox, config_);
}

BBox SiameseTracker::update(const Image& frame) {
  if (!state_) throw ValueError("tracker used before init");
  auto result = track_frame(*state_, model_, frame, config_);
  state_ = std::move(result.state);
  return result.bbox;
}

const TrackerState& SiameseTracker::state() const {
  if (!state_) throw ValueError("tracker used before init");
  return *state_;
}

}  // namespace siamlite
