// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// End-to-end per-image network: CSAC classifier -> instance selection ->
// assignment graph -> ILMS scores -> cross-instance max pooling.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/csac.hpp"
#include "mlsgm/graph.hpp"
#include "mlsgm/ilms.hpp"
#include "mlsgm/losses.hpp"
#include "mlsgm/param_store.hpp"

namespace mlsgm {

struct ModelConfig {
  std::size_t channels = 0;       // D
  std::size_t classes = 0;        // C, classifier rows
  std::size_t embedding_dim = 0;  // E
  std::vector<std::size_t> widths{16, 8};
  std::size_t mlp_layers = 2;
  double gamma = 0.5;
  std::size_t k_nn = 3;
  csac::ScorePooling pooling = csac::ScorePooling::kMean;
};

inline constexpr const char* kClassifierWeight = "csac.classifier.w";
inline constexpr const char* kClassifierBias = "csac.classifier.b";

/// Instance selection decided from forward values. Passing it back into
/// Model::forward holds the piecewise-constant choices fixed.
struct Selection {
  std::vector<std::size_t> classes;  // selected classifier rows, ascending
  std::vector<csac::BBox> boxes;     // one per selected class
};

struct ImageForward {
  ad::Var prediction;       // 1 x |active|, max-pooled matching scores
  ad::Var class_scores;     // 1 x |active|, CSAC pooled activation
  ad::Var matching_scores;  // (M+1) x |active|
  Selection selection;
  graph::AssignmentGraph graph;
};

enum class ObjectiveKind { kWeightedBce, kPartialBce, kAsymmetricFocal };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::kWeightedBce;
  std::vector<double> priors;  // weighted BCE only, one per active class
  double beta = 0.0;
  losses::PartialBceParams partial;
  losses::FocalParams focal;
  double lambda_aux = 1.0;

  /// `labels` are tri-state over the active classes.
  ad::Var operator()(ad::Var p, std::span<const int> labels) const;
};

class Model {
 public:
  /// Fresh parameters drawn from `seed`. Embeddings are C x E (rounded to float32).
  Model(ModelConfig config, Tensor embeddings, std::uint64_t seed);
  /// Wraps existing parameters; throws ShapeError if any is missing or mis-shaped.
  Model(ModelConfig config, Tensor embeddings, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const Tensor& embeddings() const { return embeddings_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ilms::IlmsModel& ilms() const { return ilms_; }

  /// `active` lists classifier rows (ascending or not) that form the label
  /// space; outputs follow that order.
  ImageForward forward(ad::Tape& tape, const Tensor& features, std::span<const std::size_t> active,
                       const Selection* frozen = nullptr) const;

  /// Image-level prediction over `active`.
  std::vector<double> predict(const Tensor& features, std::span<const std::size_t> active) const;

 private:
  ModelConfig config_;
  Tensor embeddings_;
  ParamStore params_;
  ilms::IlmsModel ilms_;
};

std::vector<std::size_t> all_classes(std::size_t classes);

}  // namespace mlsgm
