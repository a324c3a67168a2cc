#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "siamlite/network.hpp"
#include "siamlite/sequence.hpp"
#include "siamlite/tape.hpp"

namespace siamlite {

struct TrainConfig {
  double lambda_reg = 1.0;
  double kd_weight = 0.0;  // mu; ignored when no teacher is given
  double lr = 0.02;
  std::size_t steps = 2000;
  std::size_t pos_radius = 1;  // 2 leaves a centred target with no negatives on the 9x9 desk map
  std::uint64_t rng_seed = 42;
  std::size_t batch_size = 8;  // pairs averaged per SGD step
  double clip_norm = 1.0;      // global gradient L2 norm cap; 0 disables

  void validate() const;
};

/// Pair sampling and augmentation.
struct SampleConfig {
  double context_factor = 2.0;
  std::size_t max_gap = 10;
  bool augment = true;
  double shift = 0.25;          // search-center jitter, fraction of crop side
  double min_scale = 0.8;       // prior size jitter
  double max_scale = 1.2;
  double brightness = 0.1;      // search patch gain jitter

  void validate() const;
};

struct PairSample {
  Tensor template_patch;
  Tensor search_patch;
  BBox gt_in_search;     // target box in search-patch pixels
  BBox prior_in_search;  // box the search crop was taken around, same frame
};

/// Draws frames i < j <= i + max_gap, crops the template on gt_i and the
/// search region around a jittered copy of gt_j.
PairSample sample_pair(const Sequence& sequence, const NetworkSpec& spec, Rng& rng,
                       const SampleConfig& config = {});

enum class CellLabel : std::uint8_t { kNegative = 0, kPositive = 1, kIgnore = 2 };

struct LabelMaps {
  std::size_t extent = 0;
  std::vector<CellLabel> cells;  // row-major, extent x extent
  Tensor cls_targets;            // 1 x 1 x R x R, 1 on positives
  Tensor cls_weights;            // 1 x 1 x R x R, 1 on non-ignore cells
  Tensor reg_targets;            // 1 x 4 x R x R, valid on positives
  Tensor reg_mask;               // 1 x 4 x R x R, 1 on positives
  bool target_in_crop = false;   // false means the map is all negative

  std::size_t positives() const;
};

/// Cells within pos_radius (Chebyshev) of the target cell are positive, cells
/// beyond 2 * pos_radius negative, the ring between ignored. Regression
/// targets are relative to `prior_in_search`, the box decode_bbox will see.
LabelMaps make_labels(const BBox& gt_in_search, const BBox& prior_in_search,
                      const ResponseGeometry& geometry, std::size_t pos_radius);

struct LossTerms {
  double cls = 0;
  double reg = 0;
  double kd = 0;
  double total = 0;
};

struct LossIds {
  ValueId cls;
  ValueId reg;
  ValueId total;  // cls + lambda * reg
};

/// Mean BCE over non-ignore cells plus lambda times mean smooth-L1 over the
/// positive cells' four offsets.
LossIds loss(Tape& tape, const HeadIds& heads, const LabelMaps& labels, double lambda_reg);
LossTerms loss(const Tensor& cls_map, const Tensor& reg_map, const LabelMaps& labels,
               double lambda_reg);

/// Teacher response brought to the student's extents (bilinear when they differ).
Tensor align_response(const Tensor& teacher, std::size_t extent);

ValueId distill_loss(Tape& tape, ValueId student, const Tensor& teacher);
double distill_loss(const Tensor& student, const Tensor& teacher);

/// theta - lr * g for every parameter. `grads` must mirror `weights` exactly.
Weights sgd_step(const Weights& weights, const Weights& grads, double lr);

/// Gradients of one tape, arranged like the weights they belong to.
Weights collect_gradients(const Gradients& grads, const WeightIds& ids);

struct LossRecord {
  std::size_t step = 0;
  LossTerms terms;
};

std::string format_history(const std::vector<LossRecord>& history);

struct TrainResult {
  Model model;
  std::vector<LossRecord> history;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainResult partial)
      : Error(what), partial_(std::move(partial)) {}
  const TrainResult& partial() const { return partial_; }

 private:
  TrainResult partial_;
};

/// One forward/backward over a pair. `teacher_cls` is the teacher's raw cls
/// map; pass nullptr (or kd_weight 0) to skip the distillation term.
struct PairGradients {
  LossTerms terms;
  Weights grads;
};
PairGradients pair_gradients(const Model& model, const PairSample& pair, const TrainConfig& config,
                             const Tensor* teacher_cls);

/// Samples, forwards, backpropagates and steps `config.steps` times. The
/// teacher, when given, stays frozen. Throws TrainingDiverged on a non-finite
/// loss, carrying the history up to the failing step.
TrainResult train(Model model, const std::vector<Sequence>& sequences, const TrainConfig& config,
                  const Model* teacher = nullptr, const SampleConfig& sampling = {});

/// Fixed pair set for comparing losses across models.
std::vector<PairSample> sample_pairs(const std::vector<Sequence>& sequences,
                                     const NetworkSpec& spec, std::size_t count,
                                     std::uint64_t seed, const SampleConfig& sampling = {});

/// Mean multi-task loss over a fixed pair set.
LossTerms evaluate_loss(const Model& model, const std::vector<PairSample>& pairs,
                        const TrainConfig& config);

}  // namespace siamlite
