// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Content-aware semantic activation: per-class activation maps over a
// feature map, class scores, instance pooling, and heat-map localization.

#include <cstddef>
#include <span>
#include <vector>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::csac {

inline constexpr int kGlobalClass = -1;

/// Box on the unit square: (x, y) top-left corner, (w, h) extent. x runs
/// along the width (columns), y along the height (rows).
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  bool operator==(const BBox&) const = default;
};

enum class ScorePooling { kMean, kMax };

struct ActivationMaps {
  Tensor maps;                        // C x H x W, entries in [0, 1]
  std::vector<double> class_scores;  // length C
};

struct Instance {
  std::vector<double> feature;
  BBox bbox;
  double score = 1.0;
  int class_id = kGlobalClass;

  bool is_global() const { return class_id == kGlobalClass; }
};

/// Element 0 is always the global instance.
using InstanceSet = std::vector<Instance>;

/// maps[c] = sigmoid(W[c] . F(:, y, x) + b[c]); score[c] = pooled maps[c].
ActivationMaps activate(const Tensor& features, const Tensor& classifier_weight,
                        std::span<const double> classifier_bias,
                        ScorePooling pooling = ScorePooling::kMean);

/// feature[d] = sum over cells of map(y, x) * F(d, y, x).
std::vector<double> pool_instance(const Tensor& features, const Tensor& map);

/// Tight box around the largest 8-connected segment of cells above 20% of
/// the map maximum. Maps without a positive entry yield the full grid.
BBox localize(const Tensor& map, double relative_threshold = 0.2);

/// Spatial mean of the feature map (the whole-image instance).
std::vector<double> global_feature(const Tensor& features);

/// H x W slice of class c.
Tensor class_map(const ActivationMaps& acts, std::size_t c);

/// Classes among `candidates` (all classes when empty), ascending, whose score
/// exceeds gamma.
std::vector<std::size_t> selected_classes(std::span<const double> scores, double gamma,
                                          std::span<const std::size_t> candidates = {});

/// Global instance followed by every selected class in ascending order.
InstanceSet select_instances(const ActivationMaps& acts, const Tensor& features, double gamma,
                             std::span<const std::size_t> candidates = {});

// Differentiable route used during training. `positions` is the (H*W) x D
// matrix from positions_by_channels().

struct TapeActivation {
  ad::Var maps;    // (H*W) x C
  ad::Var scores;  // 1 x C
};

TapeActivation activate(ad::Var positions, ad::Var classifier_weight, ad::Var classifier_bias,
                        ScorePooling pooling = ScorePooling::kMean);

/// C x D matrix of pooled features, row c = pool_instance(F, maps[c]).
ad::Var pool_instances(ad::Var maps, ad::Var positions);

}  // namespace mlsgm::csac
