// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Assignment graph construction: instance spatial graph (kNN over box
// centers), complete label semantic graph, and instance-label matching edges.

#include <cstddef>
#include <span>
#include <vector>

#include "mlsgm/csac.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::graph {

/// Directed edge. A node aggregates over edges whose dst is itself.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  bool operator==(const Edge&) const = default;
};

struct InstanceGraph {
  Tensor nodes;                 // n x D
  std::vector<Edge> edges;
  Tensor edge_attr;             // |edges| x 8: [box_src, box_dst]
};

struct LabelGraph {
  Tensor nodes;                 // C x E
  std::vector<Edge> edges;
  Tensor edge_attr;             // |edges| x 2E: [w_src, w_dst]
};

/// Matching edge (i, c) is stored at row i * C + c of `matching_edge_attr`.
struct AssignmentGraph {
  Tensor instance_nodes;
  Tensor label_nodes;
  std::vector<Edge> instance_edges;
  Tensor instance_edge_attr;
  std::vector<Edge> label_edges;
  Tensor label_edge_attr;
  Tensor matching_edge_attr;    // (n * C) x (D + E): [v_instance, v_label]

  std::size_t num_instances() const { return instance_nodes.rows(); }
  std::size_t num_labels() const { return label_nodes.rows(); }
  std::size_t num_matching_edges() const { return matching_edge_attr.rows(); }
  std::size_t matching_index(std::size_t instance, std::size_t label) const {
    return instance * num_labels() + label;
  }
};

/// For each node i, edges i -> j to its min(k, n-1) nearest box centers
/// (Euclidean; ties to the smaller index). Edges are ordered by src, then rank.
std::vector<Edge> knn_edges(std::span<const csac::BBox> boxes, std::size_t k);

InstanceGraph build_instance_graph(const csac::InstanceSet& instances, std::size_t k = 3);
LabelGraph build_label_graph(const Tensor& embeddings);
AssignmentGraph build_assignment_graph(InstanceGraph instances, LabelGraph labels);

}  // namespace mlsgm::graph
