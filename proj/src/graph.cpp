// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/graph.hpp"

#include <algorithm>

#include "mlsgm/error.hpp"

namespace mlsgm::graph {

std::vector<Edge> knn_edges(std::span<const csac::BBox> boxes, std::size_t k) {
  const std::size_t n = boxes.size();
  std::vector<Edge> edges;
  if (n < 2 || k == 0) return edges;
  const std::size_t kk = std::min(k, n - 1);
  edges.reserve(n * kk);
  std::vector<std::size_t> order;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = boxes[i].center_x() - boxes[j].center_x();
      const double dy = boxes[i].center_y() - boxes[j].center_y();
      dist[j] = dx * dx + dy * dy;
    }
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t r = 0; r < kk; ++r) edges.push_back(Edge{i, order[r]});
  }
  return edges;
}

InstanceGraph build_instance_graph(const csac::InstanceSet& instances, std::size_t k) {
  if (instances.empty()) throw ShapeError("instance graph needs at least one instance");
  const std::size_t n = instances.size();
  const std::size_t d = instances[0].feature.size();
  InstanceGraph g;
  g.nodes = Tensor::matrix(n, d);
  std::vector<csac::BBox> boxes;
  boxes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (instances[i].feature.size() != d) throw ShapeError("instance features differ in length");
    std::copy(instances[i].feature.begin(), instances[i].feature.end(), g.nodes.row(i).begin());
    boxes.push_back(instances[i].bbox);
  }
  g.edges = knn_edges(boxes, k);
  g.edge_attr = Tensor::matrix(g.edges.size(), 8);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& a = boxes[g.edges[e].src];
    const auto& b = boxes[g.edges[e].dst];
    auto row = g.edge_attr.row(e);
    const double values[8] = {a.x, a.y, a.w, a.h, b.x, b.y, b.w, b.h};
    std::copy(std::begin(values), std::end(values), row.begin());
  }
  return g;
}

LabelGraph build_label_graph(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() == 0) throw ShapeError("label graph needs a C x E embedding matrix");
  const std::size_t c = embeddings.rows(), e = embeddings.cols();
  LabelGraph g;
  g.nodes = embeddings;
  g.edges.reserve(c * (c - 1));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (i != j) g.edges.push_back(Edge{i, j});
  g.edge_attr = Tensor::matrix(g.edges.size(), 2 * e);
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    auto row = g.edge_attr.row(k);
    std::copy_n(embeddings.row(g.edges[k].src).begin(), e, row.begin());
    std::copy_n(embeddings.row(g.edges[k].dst).begin(), e, row.begin() + e);
  }
  return g;
}

AssignmentGraph build_assignment_graph(InstanceGraph instances, LabelGraph labels) {
  AssignmentGraph g;
  const std::size_t n = instances.nodes.rows(), c = labels.nodes.rows();
  const std::size_t d = instances.nodes.cols(), e = labels.nodes.cols();
  g.matching_edge_attr = Tensor::matrix(n * c, d + e);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      auto row = g.matching_edge_attr.row(i * c + j);
      std::copy_n(instances.nodes.row(i).begin(), d, row.begin());
      std::copy_n(labels.nodes.row(j).begin(), e, row.begin() + d);
    }
  g.instance_nodes = std::move(instances.nodes);
  g.instance_edges = std::move(instances.edges);
  g.instance_edge_attr = std::move(instances.edge_attr);
  g.label_nodes = std::move(labels.nodes);
  g.label_edges = std::move(labels.edges);
  g.label_edge_attr = std::move(labels.edge_attr);
  return g;
}

}  // namespace mlsgm::graph
