// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/model.hpp"

#include <algorithm>
#include <cmath>

#include "mlsgm/error.hpp"

namespace mlsgm {

namespace {

ilms::IlmsConfig ilms_config(const ModelConfig& c) {
  ilms::IlmsConfig out;
  out.instance_dim = c.channels;
  out.label_dim = c.embedding_dim;
  out.widths = c.widths;
  out.mlp_layers = c.mlp_layers;
  return out;
}

Tensor to_storage_precision(Tensor t) {
  for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

void check_config(const ModelConfig& c, const Tensor& embeddings) {
  if (!c.channels || !c.classes || !c.embedding_dim) throw ConfigError("model extents must be positive");
  if (c.gamma < 0.0 || c.gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
  if (c.k_nn == 0) throw ConfigError("k_nn must be positive");
  require_matrix(embeddings, c.classes, c.embedding_dim, "label embeddings");
}

}  // namespace

std::vector<std::size_t> all_classes(std::size_t classes) {
  std::vector<std::size_t> out(classes);
  for (std::size_t c = 0; c < classes; ++c) out[c] = c;
  return out;
}

ad::Var Objective::operator()(ad::Var p, std::span<const int> labels) const {
  switch (kind) {
    case ObjectiveKind::kWeightedBce:
      return losses::weighted_bce(p, losses::to_binary(labels), priors, beta);
    case ObjectiveKind::kPartialBce:
      return losses::partial_bce(p, labels, partial);
    case ObjectiveKind::kAsymmetricFocal:
      return losses::asymmetric_focal(p, losses::to_binary(labels), focal);
  }
  throw StateError("unknown objective");
}

Model::Model(ModelConfig config, Tensor embeddings, std::uint64_t seed)
    : config_(std::move(config)), embeddings_(to_storage_precision(std::move(embeddings))) {
  check_config(config_, embeddings_);
  SplitMix64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(config_.channels + config_.classes));
  Tensor w = Tensor::matrix(config_.classes, config_.channels);
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  params_.add(kClassifierWeight, std::move(w));
  params_.add(kClassifierBias, Tensor::matrix(config_.classes, 1));
  ilms_ = ilms::IlmsModel::create(params_, ilms_config(config_), rng);
}

Model::Model(ModelConfig config, Tensor embeddings, ParamStore params)
    : config_(std::move(config)), embeddings_(to_storage_precision(std::move(embeddings))), params_(std::move(params)) {
  check_config(config_, embeddings_);
  require_matrix(params_.get(kClassifierWeight).value, config_.classes, config_.channels, "classifier weight");
  require_matrix(params_.get(kClassifierBias).value, config_.classes, 1, "classifier bias");
  ilms_ = ilms::IlmsModel::bind(params_, ilms_config(config_));
}

ImageForward Model::forward(ad::Tape& tape, const Tensor& features, std::span<const std::size_t> active,
                            const Selection* frozen) const {
  require_rank(features, 3, "image features");
  if (features.shape()[0] != config_.channels)
    throw ShapeError("image features have " + std::to_string(features.shape()[0]) + " channels, model expects " +
                     std::to_string(config_.channels));
  if (active.empty()) throw ConfigError("active class set is empty");
  for (auto c : active)
    if (c >= config_.classes) throw ConfigError("active class out of range");
  const std::size_t h = features.shape()[1], w = features.shape()[2];
  std::vector<std::size_t> active_list(active.begin(), active.end());

  ad::Var positions = tape.constant(positions_by_channels(features));
  auto act = csac::activate(positions, tape.param(kClassifierWeight), tape.param(kClassifierBias), config_.pooling);

  ImageForward out;
  out.class_scores = ad::gather_cols(act.scores, active_list);
  if (frozen) {
    out.selection = *frozen;
  } else {
    const auto& maps = act.maps.value();  // HW x C
    const auto scores = act.scores.value().data();
    out.selection.classes = csac::selected_classes(scores, config_.gamma, active);
    for (auto c : out.selection.classes) {
      Tensor map = Tensor::matrix(h, w);
      for (std::size_t p = 0; p < h * w; ++p) map.data()[p] = maps(p, c);
      out.selection.boxes.push_back(csac::localize(map));
    }
  }
  const auto& sel = out.selection;
  if (sel.boxes.size() != sel.classes.size()) throw StateError("selection boxes do not match classes");

  const auto global = csac::global_feature(features);
  ad::Var instances = tape.constant(Tensor::row_vector(global));
  if (!sel.classes.empty()) {
    ad::Var pooled = csac::pool_instances(ad::gather_cols(act.maps, sel.classes), positions);
    instances = ad::concat_rows({instances, pooled});
  }

  csac::InstanceSet set;
  const auto& iv = instances.value();
  for (std::size_t i = 0; i < iv.rows(); ++i) {
    csac::Instance inst;
    inst.feature.assign(iv.row(i).begin(), iv.row(i).end());
    if (i > 0) {
      inst.bbox = sel.boxes[i - 1];
      inst.class_id = static_cast<int>(sel.classes[i - 1]);
    }
    set.push_back(std::move(inst));
  }
  Tensor label_rows = Tensor::matrix(active_list.size(), config_.embedding_dim);
  for (std::size_t j = 0; j < active_list.size(); ++j)
    std::copy_n(embeddings_.row(active_list[j]).begin(), config_.embedding_dim, label_rows.row(j).begin());
  out.graph = graph::build_assignment_graph(graph::build_instance_graph(set, config_.k_nn),
                                            graph::build_label_graph(label_rows));

  const auto& g = out.graph;
  std::vector<std::size_t> match_inst, match_label;
  for (std::size_t m = 0; m < g.num_matching_edges(); ++m) {
    match_inst.push_back(m / g.num_labels());
    match_label.push_back(m % g.num_labels());
  }
  ilms::GraphState attrs;
  attrs.instance_nodes = instances;
  attrs.label_nodes = tape.constant(g.label_nodes);
  attrs.instance_edges = tape.constant(g.instance_edge_attr);
  attrs.label_edges = tape.constant(g.label_edge_attr);
  attrs.matching_edges =
      ad::concat_cols({ad::gather_rows(instances, match_inst), ad::gather_rows(attrs.label_nodes, match_label)});

  out.matching_scores = ilms_.forward(g, attrs);
  out.prediction = losses::max_pool(out.matching_scores);
  return out;
}

std::vector<double> Model::predict(const Tensor& features, std::span<const std::size_t> active) const {
  ad::Tape tape(params_);
  auto fwd = forward(tape, features, active);
  auto d = fwd.prediction.value().data();
  return {d.begin(), d.end()};
}

}  // namespace mlsgm
