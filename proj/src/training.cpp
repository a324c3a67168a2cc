#include "siamlite/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "siamlite/ops.hpp"
#include "siamlite/tracker.hpp"

namespace siamlite {

void TrainConfig::validate() const {
  if (!(lambda_reg >= 0) || !std::isfinite(lambda_reg)) {
    throw ValueError("train: lambda_reg must be >= 0");
  }
  if (!(kd_weight >= 0) || !std::isfinite(kd_weight)) {
    throw ValueError("train: kd_weight must be >= 0");
  }
  if (!(lr > 0) || !std::isfinite(lr)) throw ValueError("train: lr must be > 0");
  if (batch_size == 0) throw ValueError("train: batch_size must be >= 1");
  if (!(clip_norm >= 0) || !std::isfinite(clip_norm)) {
    throw ValueError("train: clip_norm must be >= 0");
  }
}

void SampleConfig::validate() const {
  if (!(context_factor > 0)) throw ValueError("sample_pair: context_factor must be positive");
  if (max_gap == 0) throw ValueError("sample_pair: max_gap must be >= 1");
  if (!(shift >= 0 && shift < 0.5)) throw ValueError("sample_pair: shift must be in [0, 0.5)");
  if (!(min_scale > 0) || max_scale < min_scale) {
    throw ValueError("sample_pair: bad scale range");
  }
  if (!(brightness >= 0 && brightness < 1)) {
    throw ValueError("sample_pair: brightness must be in [0, 1)");
  }
}

PairSample sample_pair(const Sequence& sequence, const NetworkSpec& spec, Rng& rng,
                       const SampleConfig& config) {
  config.validate();
  const std::size_t n = sequence.size();
  if (n < 2 || sequence.gt.size() != n) {
    throw ValueError("sample_pair: sequence '" + sequence.name + "' needs at least 2 frames");
  }
  const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n - 2)));
  const std::size_t j_max = std::min(i + config.max_gap, n - 1);
  const auto j = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(i + 1), static_cast<std::int64_t>(j_max)));

  const BBox& gt_i = sequence.gt[i];
  const BBox& gt_j = sequence.gt[j];
  require_valid(gt_i, "sample_pair");
  require_valid(gt_j, "sample_pair");

  const double S = static_cast<double>(spec.search_size);
  const double tpl_context = config.context_factor * static_cast<double>(spec.template_size) / S;

  BBox prior = gt_j;
  double gain = 1.0;
  if (config.augment) {
    const double s = rng.uniform(config.min_scale, config.max_scale);
    prior.w = gt_j.w * s;
    prior.h = gt_j.h * s;
    const double side = config.context_factor * std::max(prior.w, prior.h);
    prior.cx = gt_j.cx + rng.uniform(-config.shift, config.shift) * side;
    prior.cy = gt_j.cy + rng.uniform(-config.shift, config.shift) * side;
    gain = rng.uniform(1.0 - config.brightness, 1.0 + config.brightness);
  }

  PairSample out;
  out.template_patch = crop_patch(sequence.frames[i], gt_i, tpl_context, spec.template_size);
  out.search_patch = crop_patch(sequence.frames[j], prior, config.context_factor, spec.search_size);
  if (gain != 1.0) {
    for (auto& v : out.search_patch.data()) {
      v = std::clamp(static_cast<float>(v * gain), 0.0f, 1.0f);
    }
  }

  const double side = config.context_factor * std::max(prior.w, prior.h);
  const double k = S / side;
  const double x0 = prior.cx - side / 2.0;
  const double y0 = prior.cy - side / 2.0;
  out.gt_in_search = BBox{(gt_j.cx - x0) * k, (gt_j.cy - y0) * k, gt_j.w * k, gt_j.h * k};
  out.prior_in_search = BBox{S / 2.0, S / 2.0, prior.w * k, prior.h * k};
  return out;
}

std::size_t LabelMaps::positives() const {
  return static_cast<std::size_t>(
      std::count(cells.begin(), cells.end(), CellLabel::kPositive));
}

LabelMaps make_labels(const BBox& gt_in_search, const BBox& prior_in_search,
                      const ResponseGeometry& geometry, std::size_t pos_radius) {
  require_valid(gt_in_search, "make_labels");
  require_valid(prior_in_search, "make_labels");
  const std::size_t R = geometry.extent;
  if (R == 0 || geometry.stride == 0) throw ValueError("make_labels: empty response map");

  LabelMaps labels;
  labels.extent = R;
  labels.cells.assign(R * R, CellLabel::kNegative);
  labels.cls_targets = Tensor(Shape{1, 1, R, R});
  labels.cls_weights = Tensor(Shape{1, 1, R, R}, 1.0f);
  labels.reg_targets = Tensor(Shape{1, 4, R, R});
  labels.reg_mask = Tensor(Shape{1, 4, R, R});

  const double S = static_cast<double>(geometry.search_size);
  const double gx = gt_in_search.cx;
  const double gy = gt_in_search.cy;
  labels.target_in_crop = gx >= 0 && gx < S && gy >= 0 && gy < S;
  if (!labels.target_in_crop) return labels;

  const double stride = static_cast<double>(geometry.stride);
  const double half_t = static_cast<double>(geometry.template_size) / 2.0;
  auto to_cell = [&](double c) {
    const double idx = std::round((c - half_t) / stride);
    return static_cast<std::ptrdiff_t>(std::clamp(idx, 0.0, static_cast<double>(R - 1)));
  };
  const std::ptrdiff_t gc = to_cell(gx);
  const std::ptrdiff_t gr = to_cell(gy);
  const auto r = static_cast<std::ptrdiff_t>(pos_radius);
  const float dlogw = static_cast<float>(std::log(gt_in_search.w / prior_in_search.w));
  const float dlogh = static_cast<float>(std::log(gt_in_search.h / prior_in_search.h));

  for (std::size_t row = 0; row < R; ++row) {
    for (std::size_t col = 0; col < R; ++col) {
      const auto d = std::max(std::abs(static_cast<std::ptrdiff_t>(row) - gr),
                              std::abs(static_cast<std::ptrdiff_t>(col) - gc));
      CellLabel label = CellLabel::kIgnore;
      if (d <= r) {
        label = CellLabel::kPositive;
      } else if (d > 2 * r) {
        label = CellLabel::kNegative;
      }
      labels.cells[row * R + col] = label;
      if (label == CellLabel::kIgnore) labels.cls_weights.at(0, 0, row, col) = 0.0f;
      if (label != CellLabel::kPositive) continue;
      labels.cls_targets.at(0, 0, row, col) = 1.0f;
      const float tgt[4] = {
          static_cast<float>((gx - geometry.cell_center(col)) / stride),
          static_cast<float>((gy - geometry.cell_center(row)) / stride),
          dlogw,
          dlogh,
      };
      for (std::size_t ch = 0; ch < 4; ++ch) {
        labels.reg_targets.at(0, ch, row, col) = tgt[ch];
        labels.reg_mask.at(0, ch, row, col) = 1.0f;
      }
    }
  }
  return labels;
}

LossIds loss(Tape& tape, const HeadIds& heads, const LabelMaps& labels, double lambda_reg) {
  const Shape& cs = tape.value(heads.cls).shape();
  const Shape& rs = tape.value(heads.reg).shape();
  if (!(cs == labels.cls_targets.shape()) || !(rs == labels.reg_targets.shape())) {
    throw ShapeError("loss: maps " + cs.str() + "/" + rs.str() + " do not match labels " +
                     labels.cls_targets.shape().str() + "/" + labels.reg_targets.shape().str());
  }
  LossIds ids;
  ids.cls = tape.binary_cross_entropy(heads.cls, labels.cls_targets, labels.cls_weights);
  ids.reg = tape.smooth_l1(heads.reg, labels.reg_targets, labels.reg_mask);
  ids.total = tape.add(ids.cls, tape.scale(ids.reg, static_cast<float>(lambda_reg)));
  return ids;
}

LossTerms loss(const Tensor& cls_map, const Tensor& reg_map, const LabelMaps& labels,
               double lambda_reg) {
  Tape tape;
  const HeadIds heads{tape.constant(cls_map), tape.constant(reg_map)};
  const LossIds ids = loss(tape, heads, labels, lambda_reg);
  LossTerms t;
  t.cls = tape.scalar(ids.cls);
  t.reg = tape.scalar(ids.reg);
  t.total = tape.scalar(ids.total);
  return t;
}

Tensor align_response(const Tensor& teacher, std::size_t extent) {
  const Shape& s = teacher.shape();
  if (s.h == extent && s.w == extent) return teacher;
  return resize_bilinear(teacher, extent, extent);
}

ValueId distill_loss(Tape& tape, ValueId student, const Tensor& teacher) {
  const Shape& s = tape.value(student).shape();
  if (s.h != s.w) throw ShapeError("distill_loss: student response must be square");
  return tape.mean_squared_error(student, align_response(teacher, s.h));
}

double distill_loss(const Tensor& student, const Tensor& teacher) {
  Tape tape;
  return tape.scalar(distill_loss(tape, tape.constant(student), teacher));
}

Weights sgd_step(const Weights& weights, const Weights& grads, double lr) {
  if (weights.layers.size() != grads.layers.size()) {
    throw ShapeError("sgd_step: gradient layer count does not match weights");
  }
  Weights out = weights;
  const auto step = static_cast<float>(lr);
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& convs = out.layers[i].convs;
    const auto& gconvs = grads.layers[i].convs;
    if (convs.size() != gconvs.size()) {
      throw ShapeError("sgd_step: layer " + std::to_string(i) + " gradient slots do not match");
    }
    for (std::size_t k = 0; k < convs.size(); ++k) {
      auto apply = [&](Tensor& p, const Tensor& g, const char* what) {
        if (!(p.shape() == g.shape())) {
          throw ShapeError("sgd_step: layer " + std::to_string(i) + " " + what + " gradient " +
                           g.shape().str() + " does not match " + p.shape().str());
        }
        for (std::size_t e = 0; e < p.size(); ++e) p[e] -= step * g[e];
      };
      apply(convs[k].weight, gconvs[k].weight, "weight");
      apply(convs[k].bias, gconvs[k].bias, "bias");
    }
  }
  return out;
}

Weights collect_gradients(const Gradients& grads, const WeightIds& ids) {
  Weights out;
  out.layers.resize(ids.layers.size());
  for (std::size_t i = 0; i < ids.layers.size(); ++i) {
    for (const auto& conv : ids.layers[i]) {
      out.layers[i].convs.push_back({grads.of(conv.weight), grads.of(conv.bias)});
    }
  }
  return out;
}

std::string format_history(const std::vector<LossRecord>& history) {
  std::string out = "step,cls,reg,kd,total\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g\n", r.step, r.terms.cls, r.terms.reg,
                  r.terms.kd, r.terms.total);
    out += buf;
  }
  return out;
}

PairGradients pair_gradients(const Model& model, const PairSample& pair, const TrainConfig& config,
                             const Tensor* teacher_cls) {
  const ResponseGeometry geometry = response_geometry(model.spec);
  const LabelMaps labels =
      make_labels(pair.gt_in_search, pair.prior_in_search, geometry, config.pos_radius);
  Tape tape;
  const WeightIds ids = record_weights(tape, model.weights);
  const HeadIds heads = model_forward(tape, model.spec, ids, tape.constant(pair.template_patch),
                                      tape.constant(pair.search_patch));
  const LossIds task = loss(tape, heads, labels, config.lambda_reg);
  PairGradients out;
  out.terms.cls = tape.scalar(task.cls);
  out.terms.reg = tape.scalar(task.reg);
  ValueId total = task.total;
  if (teacher_cls != nullptr && config.kd_weight > 0) {
    const ValueId kd = distill_loss(tape, heads.cls, *teacher_cls);
    out.terms.kd = tape.scalar(kd);
    total = tape.add(total, tape.scale(kd, static_cast<float>(config.kd_weight)));
  }
  out.terms.total = tape.scalar(total);
  out.grads = collect_gradients(tape.backward(total), ids);
  return out;
}

namespace {

void accumulate(Weights& acc, const Weights& g) {
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    for (std::size_t k = 0; k < acc.layers[i].convs.size(); ++k) {
      auto& a = acc.layers[i].convs[k];
      const auto& b = g.layers[i].convs[k];
      for (std::size_t e = 0; e < a.weight.size(); ++e) a.weight[e] += b.weight[e];
      for (std::size_t e = 0; e < a.bias.size(); ++e) a.bias[e] += b.bias[e];
    }
  }
}

void scale_all(Weights& w, float factor) {
  for (auto& layer : w.layers) {
    for (auto& conv : layer.convs) {
      for (auto& v : conv.weight.data()) v *= factor;
      for (auto& v : conv.bias.data()) v *= factor;
    }
  }
}

double squared_norm(const Weights& w) {
  double s = 0;
  for (const auto& layer : w.layers) {
    for (const auto& conv : layer.convs) {
      for (float v : conv.weight.data()) s += static_cast<double>(v) * v;
      for (float v : conv.bias.data()) s += static_cast<double>(v) * v;
    }
  }
  return s;
}

bool finite(const LossTerms& t) {
  return std::isfinite(t.cls) && std::isfinite(t.reg) && std::isfinite(t.kd) &&
         std::isfinite(t.total);
}

}  // namespace

TrainResult train(Model model, const std::vector<Sequence>& sequences, const TrainConfig& config,
                  const Model* teacher, const SampleConfig& sampling) {
  config.validate();
  sampling.validate();
  if (sequences.empty()) throw ValueError("train: no sequences");
  model.spec.validate();
  validate_weights(model.spec, model.weights);
  if (teacher != nullptr) {
    teacher->spec.validate();
    if (teacher->spec.template_size != model.spec.template_size ||
        teacher->spec.search_size != model.spec.search_size) {
      throw ShapeError("train: teacher patch sizes differ from the student's");
    }
  }
  const bool use_kd = teacher != nullptr && config.kd_weight > 0;

  TrainResult result;
  result.history.reserve(config.steps);
  Rng rng(config.rng_seed);
  for (std::size_t step = 0; step < config.steps; ++step) {
    LossTerms mean;
    Weights grad_sum;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto s = static_cast<std::size_t>(
          rng.integer(0, static_cast<std::int64_t>(sequences.size() - 1)));
      const PairSample pair = sample_pair(sequences[s], model.spec, rng, sampling);
      std::optional<Tensor> teacher_cls;
      if (use_kd) {
        teacher_cls = model_forward(teacher->spec, teacher->weights, pair.template_patch,
                                    pair.search_patch)
                          .cls;
      }
      PairGradients pg =
          pair_gradients(model, pair, config, teacher_cls ? &*teacher_cls : nullptr);
      mean.cls += pg.terms.cls;
      mean.reg += pg.terms.reg;
      mean.kd += pg.terms.kd;
      mean.total += pg.terms.total;
      if (b == 0) {
        grad_sum = std::move(pg.grads);
      } else {
        accumulate(grad_sum, pg.grads);
      }
    }
    const double inv = 1.0 / static_cast<double>(config.batch_size);
    mean.cls *= inv;
    mean.reg *= inv;
    mean.kd *= inv;
    mean.total *= inv;
    if (!finite(mean)) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "train: loss became non-finite at step %zu (total=%g)", step,
                    mean.total);
      result.model = model;
      throw TrainingDiverged(buf, std::move(result));
    }
    if (config.batch_size > 1) scale_all(grad_sum, static_cast<float>(inv));
    if (config.clip_norm > 0) {
      const double norm = std::sqrt(squared_norm(grad_sum));
      if (norm > config.clip_norm) scale_all(grad_sum, static_cast<float>(config.clip_norm / norm));
    }
    model.weights = sgd_step(model.weights, grad_sum, config.lr);
    result.history.push_back({step, mean});
  }
  result.model = std::move(model);
  return result;
}

std::vector<PairSample> sample_pairs(const std::vector<Sequence>& sequences,
                                     const NetworkSpec& spec, std::size_t count,
                                     std::uint64_t seed, const SampleConfig& sampling) {
  if (sequences.empty()) throw ValueError("sample_pairs: no sequences");
  Rng rng(seed);
  std::vector<PairSample> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto s = static_cast<std::size_t>(
        rng.integer(0, static_cast<std::int64_t>(sequences.size() - 1)));
    pairs.push_back(sample_pair(sequences[s], spec, rng, sampling));
  }
  return pairs;
}

LossTerms evaluate_loss(const Model& model, const std::vector<PairSample>& pairs,
                        const TrainConfig& config) {
  if (pairs.empty()) throw ValueError("evaluate_loss: no pairs");
  const ResponseGeometry geometry = response_geometry(model.spec);
  LossTerms mean;
  for (const auto& pair : pairs) {
    const HeadMaps maps =
        model_forward(model.spec, model.weights, pair.template_patch, pair.search_patch);
    const LabelMaps labels =
        make_labels(pair.gt_in_search, pair.prior_in_search, geometry, config.pos_radius);
    const LossTerms t = loss(maps.cls, maps.reg, labels, config.lambda_reg);
    mean.cls += t.cls;
    mean.reg += t.reg;
    mean.total += t.total;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  mean.cls *= inv;
  mean.reg *= inv;
  mean.total *= inv;
  return mean;
}

}  // namespace siamlite
