#pragma once

// Central finite-difference checks of every differentiable tape primitive in
// 64-bit arithmetic.

#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "siamlite/tape.hpp"

namespace gradcheck {

using siamlite::Rng;
using siamlite::Shape;
using siamlite::TapeD;
using siamlite::TensorD;
using siamlite::ValueId;

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-4;
inline constexpr int kPoints = 20;

/// Builds a scalar loss from the recorded parameters. `constants` are drawn
/// once per point and stay fixed while the parameters are perturbed.
using Builder =
    std::function<ValueId(TapeD&, const std::vector<ValueId>&, const std::vector<TensorD>&)>;

struct Case {
  std::string name;
  std::vector<Shape> params;
  std::function<std::vector<TensorD>(Rng&, const std::vector<TensorD>& params)> constants;
  Builder build;
  /// Keeps parameter draws away from kinks; returns false to redraw.
  std::function<bool(const std::vector<TensorD>& params, const std::vector<TensorD>& consts)>
      admissible = nullptr;
};

inline std::vector<double> flatten(const std::vector<TensorD>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.vector().begin(), t.vector().end());
  return out;
}

inline std::vector<TensorD> unflatten(const std::vector<double>& x, const std::vector<Shape>& shapes) {
  std::vector<TensorD> out;
  std::size_t at = 0;
  for (const auto& s : shapes) {
    std::vector<double> v(x.begin() + static_cast<long>(at),
                          x.begin() + static_cast<long>(at + s.count()));
    at += s.count();
    out.emplace_back(s, std::move(v));
  }
  return out;
}

inline double evaluate(const Case& c, const std::vector<TensorD>& params,
                       const std::vector<TensorD>& consts, std::vector<double>* grad) {
  TapeD tape;
  std::vector<ValueId> ids;
  for (const auto& p : params) ids.push_back(tape.parameter(p));
  const ValueId loss = c.build(tape, ids, consts);
  if (grad != nullptr) {
    const auto g = tape.backward(loss);
    grad->clear();
    for (const auto& id : ids) {
      const auto& t = g.of(id);
      grad->insert(grad->end(), t.vector().begin(), t.vector().end());
    }
  }
  return tape.scalar(loss);
}

/// Worst relative error over kPoints random points.
inline double run(const Case& c, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (int point = 0; point < kPoints; ++point) {
    std::vector<TensorD> params, consts;
    for (int attempt = 0;; ++attempt) {
      params.clear();
      for (const auto& s : c.params) params.push_back(oracle::random_tensor<double>(rng, s));
      consts = c.constants ? c.constants(rng, params) : std::vector<TensorD>{};
      if (!c.admissible || c.admissible(params, consts)) break;
    }
    std::vector<double> analytic;
    evaluate(c, params, consts, &analytic);
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& x) {
          return evaluate(c, unflatten(x, c.params), consts, nullptr);
        },
        flatten(params), kStep);
    worst = std::max(worst, oracle::worst_relative_error(analytic, numeric));
  }
  return worst;
}

inline bool away_from(const TensorD& t, std::initializer_list<double> kinks, double margin) {
  for (double v : t.vector())
    for (double k : kinks)
      if (std::abs(v - k) < margin) return false;
  return true;
}

/// Random linear functional of `value`, so every output element matters.
inline ValueId project(TapeD& tape, ValueId value, const TensorD& weights) {
  return tape.cross_correlate(value, tape.constant(weights));
}

inline TensorD random_like(Rng& rng, Shape s) { return oracle::random_tensor<double>(rng, s); }

inline std::vector<Case> cases() {
  std::vector<Case> out;
  out.push_back(Case{
      "conv2d",
      {{1, 2, 6, 6}, {3, 2, 3, 3}, {1, 3, 1, 1}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 3, 3, 3})}; },
      [](TapeD& t, const auto& p, const auto& k) {
        return project(t, t.conv2d(p[0], p[1], p[2], 2, 1), k[0]);
      }});
  out.push_back(Case{
      "depthwise_conv2d",
      {{1, 3, 6, 6}, {3, 1, 3, 3}, {1, 3, 1, 1}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 3, 6, 6})}; },
      [](TapeD& t, const auto& p, const auto& k) {
        return project(t, t.depthwise_conv2d(p[0], p[1], p[2], 1, 1), k[0]);
      }});
  out.push_back(Case{
      "relu6",
      {{1, 2, 4, 4}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 2, 4, 4})}; },
      [](TapeD& t, const auto& p, const auto& k) {
        return project(t, t.relu6(t.scale(p[0], 7.0)), k[0]);
      },
      // 7x stretches [-1, 1] over both kinks.
      [](const auto& p, const auto&) { return away_from(p[0], {0.0, 6.0 / 7.0}, 0.01); }});
  out.push_back(Case{
      "add",
      {{1, 2, 3, 3}, {1, 2, 3, 3}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 2, 3, 3})}; },
      [](TapeD& t, const auto& p, const auto& k) { return project(t, t.add(p[0], p[1]), k[0]); }});
  out.push_back(Case{
      "scale",
      {{1, 2, 3, 3}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 2, 3, 3})}; },
      [](TapeD& t, const auto& p, const auto& k) { return project(t, t.scale(p[0], -1.7), k[0]); }});
  out.push_back(Case{
      "cross_correlate",
      {{1, 2, 6, 5}, {1, 2, 3, 2}},
      nullptr,
      [](TapeD& t, const auto& p, const auto&) {
        return t.squared_norm(t.cross_correlate(p[0], p[1]));
      }});
  out.push_back(Case{
      "sum",
      {{1, 3, 2, 2}},
      nullptr,
      [](TapeD& t, const auto& p, const auto&) { return t.sum(t.relu6(t.add(p[0], p[0]))); },
      [](const auto& p, const auto&) { return away_from(p[0], {0.0}, 0.01); }});
  out.push_back(Case{
      "squared_norm",
      {{1, 2, 3, 3}},
      nullptr,
      [](TapeD& t, const auto& p, const auto&) { return t.squared_norm(p[0]); }});
  out.push_back(Case{
      "mean_squared_error",
      {{1, 1, 5, 5}},
      [](Rng& rng, const auto&) { return std::vector<TensorD>{random_like(rng, {1, 1, 5, 5})}; },
      [](TapeD& t, const auto& p, const auto& k) { return t.mean_squared_error(p[0], k[0]); }});
  out.push_back(Case{
      "binary_cross_entropy",
      {{1, 1, 5, 5}},
      [](Rng& rng, const auto&) {
        TensorD targets({1, 1, 5, 5}), weights({1, 1, 5, 5});
        for (std::size_t i = 0; i < targets.size(); ++i) {
          targets[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
          weights[i] = rng.uniform() < 0.2 ? 0.0 : 1.0;
        }
        weights[0] = 1.0;
        return std::vector<TensorD>{targets, weights};
      },
      [](TapeD& t, const auto& p, const auto& k) {
        return t.binary_cross_entropy(t.scale(p[0], 4.0), k[0], k[1]);
      }});
  out.push_back(Case{
      "smooth_l1",
      {{1, 4, 3, 3}},
      [](Rng& rng, const auto&) {
        TensorD target = oracle::random_tensor<double>(rng, {1, 4, 3, 3}, -2.0, 2.0);
        TensorD mask({1, 4, 3, 3});
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        mask[0] = 1.0;
        return std::vector<TensorD>{target, mask};
      },
      [](TapeD& t, const auto& p, const auto& k) {
        return t.smooth_l1(t.scale(p[0], 2.0), k[0], k[1]);
      },
      // Residuals stay clear of the +-1 switch between branches.
      [](const auto& p, const auto& k) {
        for (std::size_t i = 0; i < p[0].size(); ++i) {
          const double r = std::abs(2.0 * p[0][i] - k[0][i]);
          if (std::abs(r - 1.0) < 0.01) return false;
        }
        return true;
      }});
  return out;
}

}  // namespace gradcheck
