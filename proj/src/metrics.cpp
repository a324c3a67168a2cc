#include "siamlite/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace siamlite {

double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.left() + a.w, b.left() + b.w) - std::max(a.left(), b.left());
  const double iy = std::min(a.top() + a.h, b.top() + b.h) - std::max(a.top(), b.top());
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double center_error(const BBox& a, const BBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

namespace {

void require_pairs(const std::vector<BBox>& pred, const std::vector<BBox>& gt, const char* what) {
  if (pred.size() != gt.size()) {
    throw ValueError(std::string(what) + ": " + std::to_string(pred.size()) +
                     " predictions for " + std::to_string(gt.size()) + " ground-truth boxes");
  }
  if (pred.empty()) throw ValueError(std::string(what) + ": empty trajectory");
}

}  // namespace

PrecisionResult precision_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  require_pairs(pred, gt, "precision_metrics");
  std::vector<double> errors(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) errors[i] = center_error(pred[i], gt[i]);
  std::sort(errors.begin(), errors.end());
  PrecisionResult r;
  r.curve.resize(kPrecisionThresholds);
  const double n = static_cast<double>(errors.size());
  for (std::size_t t = 0; t < kPrecisionThresholds; ++t) {
    const auto hit = std::upper_bound(errors.begin(), errors.end(), static_cast<double>(t));
    r.curve[t] = static_cast<double>(hit - errors.begin()) / n;
  }
  r.at_20 = r.curve[20];
  return r;
}

double success_threshold(std::size_t index) { return static_cast<double>(index) / 20.0; }

SuccessResult success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  require_pairs(pred, gt, "success_auc");
  std::vector<double> overlaps(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) overlaps[i] = iou(pred[i], gt[i]);
  std::sort(overlaps.begin(), overlaps.end());
  SuccessResult r;
  r.curve.resize(kSuccessThresholds);
  const double n = static_cast<double>(overlaps.size());
  double sum = 0;
  for (std::size_t k = 0; k < kSuccessThresholds; ++k) {
    const auto first = std::lower_bound(overlaps.begin(), overlaps.end(), success_threshold(k));
    r.curve[k] = static_cast<double>(overlaps.end() - first) / n;
    sum += r.curve[k];
  }
  r.auc = sum / static_cast<double>(kSuccessThresholds);
  return r;
}

GroundTruthTracker::GroundTruthTracker(const Sequence& sequence, std::size_t start_frame)
    : sequence_(sequence), cursor_(start_frame) {}

void GroundTruthTracker::init(const Image&, const BBox&) {}

BBox GroundTruthTracker::update(const Image&) {
  ++cursor_;
  if (cursor_ >= sequence_.gt.size()) throw ValueError("ground-truth tracker ran past the end");
  return sequence_.gt[cursor_];
}

ReplayTracker::ReplayTracker(const std::vector<BBox>& boxes, std::size_t start_frame)
    : boxes_(boxes), cursor_(start_frame) {}

void ReplayTracker::init(const Image&, const BBox&) {}

BBox ReplayTracker::update(const Image&) {
  ++cursor_;
  if (cursor_ >= boxes_.size()) throw ValueError("replay tracker ran past the end");
  return boxes_[cursor_];
}

namespace {

constexpr std::size_t kFailureGap = 5;

}  // namespace

EaoResult eao_like(const std::vector<Sequence>& sequences, const TrackerFactory& factory) {
  if (sequences.empty()) throw ValueError("eao_like: no sequences");
  EaoResult r;
  double sum = 0;
  for (const auto& seq : sequences) {
    seq.validate();
    const std::size_t n = seq.size();
    if (n == 0) throw ValueError("eao_like: empty sequence '" + seq.name + "'");
    auto tracker = factory(seq, 0);
    tracker->init(seq.frames[0], seq.gt[0]);
    std::size_t t = 1;
    while (t < n) {
      const double o = iou(tracker->update(seq.frames[t]), seq.gt[t]);
      ++r.frames;
      if (o > 0) {
        sum += o;
        ++t;
        continue;
      }
      ++r.failures;
      const std::size_t restart = t + kFailureGap;
      r.frames += std::min(restart, n - 1) - t;
      if (restart >= n) break;
      tracker = factory(seq, restart);
      tracker->init(seq.frames[restart], seq.gt[restart]);
      t = restart + 1;
    }
  }
  r.eao_like = r.frames > 0 ? sum / static_cast<double>(r.frames) : 0.0;
  return r;
}

EaoResult eao_like(const SiameseModel& model, const std::vector<Sequence>& sequences,
                   const TrackerConfig& config) {
  return eao_like(sequences, [&](const Sequence&, std::size_t) {
    return std::make_unique<SiameseTracker>(model, config);
  });
}

std::vector<BBox> run_tracker(SequenceTracker& tracker, const Sequence& sequence) {
  sequence.validate();
  if (sequence.size() == 0) throw ValueError("run_tracker: empty sequence");
  std::vector<BBox> out;
  out.reserve(sequence.size());
  tracker.init(sequence.frames[0], sequence.gt[0]);
  out.push_back(sequence.gt[0]);
  for (std::size_t t = 1; t < sequence.size(); ++t) out.push_back(tracker.update(sequence.frames[t]));
  return out;
}

std::string MetricsReport::format() const {
  std::string out;
  char buf[128];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s: %.6g\n", key, v);
    out += buf;
  };
  line("precision_at_20", precision_at_20);
  line("success_auc", success_auc);
  line("eao_like", eao_like);
  line("mean_iou", mean_iou);
  out += "frames: " + std::to_string(frames) + "\n";
  out += "failures: " + std::to_string(failures) + "\n";
  out += "\nthreshold_px,precision\n";
  for (std::size_t t = 0; t < precision_curve.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g\n", t, precision_curve[t]);
    out += buf;
  }
  out += "\nthreshold_iou,success\n";
  for (std::size_t k = 0; k < success_curve.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.2f,%.6g\n", success_threshold(k), success_curve[k]);
    out += buf;
  }
  return out;
}

MetricsReport evaluate_trajectories(const std::vector<std::vector<BBox>>& predictions,
                                    const std::vector<Sequence>& sequences) {
  if (predictions.size() != sequences.size()) {
    throw ValueError("evaluate: " + std::to_string(predictions.size()) + " trajectories for " +
                     std::to_string(sequences.size()) + " sequences");
  }
  std::vector<BBox> pred, gt;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (predictions[s].size() != seq.size()) {
      throw ValueError("evaluate: sequence '" + seq.name + "' has " + std::to_string(seq.size()) +
                       " frames but " + std::to_string(predictions[s].size()) + " results");
    }
    for (std::size_t t = 1; t < seq.size(); ++t) {
      require_valid(predictions[s][t], "evaluate");
      pred.push_back(predictions[s][t]);
      gt.push_back(seq.gt[t]);
    }
  }
  MetricsReport r;
  const PrecisionResult p = precision_metrics(pred, gt);
  const SuccessResult su = success_auc(pred, gt);
  r.precision_at_20 = p.at_20;
  r.precision_curve = p.curve;
  r.success_auc = su.auc;
  r.success_curve = su.curve;
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += iou(pred[i], gt[i]);
  r.mean_iou = sum / static_cast<double>(pred.size());
  r.frames = pred.size();
  const EaoResult e = eao_like(sequences, [&](const Sequence& seq, std::size_t start) {
    const auto index = static_cast<std::size_t>(&seq - sequences.data());
    return std::make_unique<ReplayTracker>(predictions[index], start);
  });
  r.eao_like = e.eao_like;
  r.failures = e.failures;
  return r;
}

MetricsReport evaluate_model(const SiameseModel& model, const std::vector<Sequence>& sequences,
                             const TrackerConfig& config) {
  std::vector<std::vector<BBox>> predictions;
  predictions.reserve(sequences.size());
  for (const auto& seq : sequences) {
    SiameseTracker tracker(model, config);
    predictions.push_back(run_tracker(tracker, seq));
  }
  MetricsReport r = evaluate_trajectories(predictions, sequences);
  const EaoResult e = eao_like(model, sequences, config);
  r.eao_like = e.eao_like;
  r.failures = e.failures;
  return r;
}

}  // namespace siamlite
