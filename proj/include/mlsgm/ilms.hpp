// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Instance-label matching selection: a graph network over the assignment
// graph. Attributes are encoded into a latent space, refined by stacked
// blocks (node convolution, then edge convolution), and every matching edge
// is decoded into a score in (0, 1).

#include <cstddef>
#include <string>
#include <vector>

#include "mlsgm/autodiff.hpp"
#include "mlsgm/graph.hpp"
#include "mlsgm/mlp.hpp"
#include "mlsgm/param_store.hpp"
#include "mlsgm/rng.hpp"

namespace mlsgm::ilms {

struct IlmsConfig {
  std::size_t instance_dim = 0;  // D
  std::size_t label_dim = 0;     // E
  /// Output width of each stacked block; the encoder emits widths[0].
  std::vector<std::size_t> widths{16, 8};
  /// Layers per MLP; hidden widths equal the output width.
  std::size_t mlp_layers = 2;
};

/// Attribute matrices of the five node/edge blocks. Structure (edge lists)
/// stays in the AssignmentGraph.
struct GraphState {
  ad::Var instance_nodes;
  ad::Var label_nodes;
  ad::Var instance_edges;
  ad::Var label_edges;
  ad::Var matching_edges;
};

/// Per-block functions; no weights are shared between functions or blocks.
struct Block {
  Mlp instance_edge_message;   // gathers [e_ji, v_j] from instance neighbours
  Mlp instance_match_message;  // gathers [e_ic, v_c] from labels
  Mlp instance_update;         // [v_i, agg_instance, agg_label] -> v_i
  Mlp label_edge_message;
  Mlp label_match_message;
  Mlp label_update;
  Mlp instance_edge_gather;    // [v_src, v_dst] -> e_hat
  Mlp instance_edge_update;    // [e, e_hat] -> e
  Mlp label_edge_gather;
  Mlp label_edge_update;
  Mlp matching_edge_gather;
  Mlp matching_edge_update;
};

class IlmsModel {
 public:
  IlmsModel() = default;
  static IlmsModel create(ParamStore& store, const IlmsConfig& config, SplitMix64& rng,
                          const std::string& prefix = "ilms");
  static IlmsModel bind(const ParamStore& store, const IlmsConfig& config, const std::string& prefix = "ilms");

  /// Attributes of `g` as tape constants.
  static GraphState inputs(ad::Tape& tape, const graph::AssignmentGraph& g);

  GraphState encode(const graph::AssignmentGraph& g, const GraphState& attrs) const;
  GraphState node_convolution(const graph::AssignmentGraph& g, const GraphState& state, std::size_t block) const;
  GraphState edge_convolution(const graph::AssignmentGraph& g, const GraphState& state, std::size_t block) const;
  /// n_instances x n_labels scores.
  ad::Var decode(const graph::AssignmentGraph& g, const GraphState& state) const;

  ad::Var forward(const graph::AssignmentGraph& g, const GraphState& attrs) const;
  ad::Var forward(ad::Tape& tape, const graph::AssignmentGraph& g) const;

  const IlmsConfig& config() const { return config_; }
  std::size_t blocks() const { return blocks_.size(); }
  const Block& block(std::size_t i) const { return blocks_.at(i); }
  const Mlp& decoder() const { return decoder_; }

 private:
  static IlmsModel build(const IlmsConfig& config, const std::string& prefix,
                         const std::function<Mlp(const std::string&, std::vector<std::size_t>, bool)>& make);

  IlmsConfig config_;
  Mlp encode_instance_node_;
  Mlp encode_label_node_;
  Mlp encode_instance_edge_;
  Mlp encode_label_edge_;
  Mlp encode_matching_edge_;
  std::vector<Block> blocks_;
  Mlp decoder_;
};

}  // namespace mlsgm::ilms
