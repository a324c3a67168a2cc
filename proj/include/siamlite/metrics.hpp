#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "siamlite/image.hpp"
#include "siamlite/sequence.hpp"
#include "siamlite/tracker.hpp"

namespace siamlite {

/// Intersection over union; 0 when disjoint.
double iou(const BBox& a, const BBox& b);
double center_error(const BBox& a, const BBox& b);

inline constexpr std::size_t kPrecisionThresholds = 51;  // 0..50 px
inline constexpr std::size_t kSuccessThresholds = 21;    // 0, 0.05, ..., 1

struct PrecisionResult {
  double at_20 = 0;
  std::vector<double> curve;  // fraction of frames with center error <= t
};

struct SuccessResult {
  double auc = 0;
  std::vector<double> curve;  // fraction of frames with IoU >= tau
};

PrecisionResult precision_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt);
SuccessResult success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt);
double success_threshold(std::size_t index);

/// Builds a tracker for `sequence` that will be initialized at `start_frame`.
/// Trackers that replay stored boxes use the arguments to stay aligned.
using TrackerFactory =
    std::function<std::unique_ptr<SequenceTracker>(const Sequence& sequence, std::size_t start_frame)>;

struct EaoResult {
  double eao_like = 0;
  std::size_t failures = 0;
  std::size_t frames = 0;  // scored frames
};

/// Simplified expected average overlap. A tracked frame with IoU 0 is a
/// failure; the five frames after it score 0 and the tracker is
/// re-initialized from ground truth on the fifth. Initialization frames are
/// not scored except as part of a post-failure gap. The result is the mean
/// over all scored frames of all sequences.
EaoResult eao_like(const std::vector<Sequence>& sequences, const TrackerFactory& factory);
EaoResult eao_like(const SiameseModel& model, const std::vector<Sequence>& sequences,
                   const TrackerConfig& config);

/// Returns ground truth for every frame.
class GroundTruthTracker final : public SequenceTracker {
 public:
  GroundTruthTracker(const Sequence& sequence, std::size_t start_frame);
  void init(const Image& frame, const BBox& bbox) override;
  BBox update(const Image& frame) override;

 private:
  const Sequence& sequence_;
  std::size_t cursor_;
};

/// Returns stored boxes, one per frame; the results-only evaluation mode.
class ReplayTracker final : public SequenceTracker {
 public:
  ReplayTracker(const std::vector<BBox>& boxes, std::size_t start_frame);
  void init(const Image& frame, const BBox& bbox) override;
  BBox update(const Image& frame) override;

 private:
  const std::vector<BBox>& boxes_;
  std::size_t cursor_;
};

/// One pass through the sequence with no re-initialization. The first box is
/// the initialization box.
std::vector<BBox> run_tracker(SequenceTracker& tracker, const Sequence& sequence);

struct MetricsReport {
  double precision_at_20 = 0;
  std::vector<double> precision_curve;
  double success_auc = 0;
  std::vector<double> success_curve;
  double eao_like = 0;
  double mean_iou = 0;
  std::size_t frames = 0;
  std::size_t failures = 0;

  /// `key: value` lines followed by the two curves as CSV blocks.
  std::string format() const;
};

/// Precision and success over the pooled frames of all sequences; eao_like
/// from the re-initializing protocol.
MetricsReport evaluate_trajectories(const std::vector<std::vector<BBox>>& predictions,
                                    const std::vector<Sequence>& sequences);
MetricsReport evaluate_model(const SiameseModel& model, const std::vector<Sequence>& sequences,
                             const TrackerConfig& config);

}  // namespace siamlite
