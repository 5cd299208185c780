// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/ilms.hpp"

#include "mlsgm/error.hpp"

namespace mlsgm::ilms {

namespace {

std::vector<std::size_t> hidden_chain(std::size_t in, std::size_t out, std::size_t layers) {
  std::vector<std::size_t> dims{in};
  for (std::size_t l = 0; l < layers; ++l) dims.push_back(out);
  return dims;
}

struct EdgeIndex {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
};

EdgeIndex split(const std::vector<graph::Edge>& edges) {
  EdgeIndex out;
  out.src.reserve(edges.size());
  out.dst.reserve(edges.size());
  for (const auto& e : edges) {
    out.src.push_back(e.src);
    out.dst.push_back(e.dst);
  }
  return out;
}

// Endpoints of matching edge m = i * C + c.
EdgeIndex matching_endpoints(const graph::AssignmentGraph& g) {
  EdgeIndex out;
  const std::size_t c = g.num_labels();
  for (std::size_t m = 0; m < g.num_matching_edges(); ++m) {
    out.src.push_back(m / c);
    out.dst.push_back(m % c);
  }
  return out;
}

}  // namespace

IlmsModel IlmsModel::build(const IlmsConfig& config, const std::string& prefix,
                           const std::function<Mlp(const std::string&, std::vector<std::size_t>, bool)>& make) {
  if (config.widths.empty()) throw ConfigError("ilms needs at least one block width");
  if (config.instance_dim == 0 || config.label_dim == 0) throw ConfigError("ilms input dimensions must be positive");
  if (config.mlp_layers == 0) throw ConfigError("ilms mlp_layers must be positive");
  const std::size_t layers = config.mlp_layers;
  const std::size_t latent = config.widths.front();

  IlmsModel m;
  m.config_ = config;
  const std::string enc = prefix + ".enc.";
  m.encode_instance_node_ = make(enc + "instance_node", hidden_chain(config.instance_dim, latent, layers), false);
  m.encode_label_node_ = make(enc + "label_node", hidden_chain(config.label_dim, latent, layers), false);
  m.encode_instance_edge_ = make(enc + "instance_edge", hidden_chain(8, latent, layers), false);
  m.encode_label_edge_ = make(enc + "label_edge", hidden_chain(2 * config.label_dim, latent, layers), false);
  m.encode_matching_edge_ =
      make(enc + "matching_edge", hidden_chain(config.instance_dim + config.label_dim, latent, layers), false);

  std::size_t in = latent;
  for (std::size_t b = 0; b < config.widths.size(); ++b) {
    const std::size_t out = config.widths[b];
    const std::string p = prefix + ".block" + std::to_string(b) + ".";
    Block blk;
    blk.instance_edge_message = make(p + "instance_edge_message", hidden_chain(2 * in, out, layers), false);
    blk.instance_match_message = make(p + "instance_match_message", hidden_chain(2 * in, out, layers), false);
    blk.instance_update = make(p + "instance_update", hidden_chain(in + 2 * out, out, layers), false);
    blk.label_edge_message = make(p + "label_edge_message", hidden_chain(2 * in, out, layers), false);
    blk.label_match_message = make(p + "label_match_message", hidden_chain(2 * in, out, layers), false);
    blk.label_update = make(p + "label_update", hidden_chain(in + 2 * out, out, layers), false);
    blk.instance_edge_gather = make(p + "instance_edge_gather", hidden_chain(2 * out, out, layers), false);
    blk.instance_edge_update = make(p + "instance_edge_update", hidden_chain(in + out, out, layers), false);
    blk.label_edge_gather = make(p + "label_edge_gather", hidden_chain(2 * out, out, layers), false);
    blk.label_edge_update = make(p + "label_edge_update", hidden_chain(in + out, out, layers), false);
    blk.matching_edge_gather = make(p + "matching_edge_gather", hidden_chain(2 * out, out, layers), false);
    blk.matching_edge_update = make(p + "matching_edge_update", hidden_chain(in + out, out, layers), false);
    m.blocks_.push_back(std::move(blk));
    in = out;
  }
  std::vector<std::size_t> dec = hidden_chain(in, in, layers);
  dec.back() = 1;
  m.decoder_ = make(prefix + ".dec", std::move(dec), true);
  return m;
}

IlmsModel IlmsModel::create(ParamStore& store, const IlmsConfig& config, SplitMix64& rng, const std::string& prefix) {
  return build(config, prefix, [&](const std::string& name, std::vector<std::size_t> dims, bool logistic) {
    return Mlp::create(store, name, std::move(dims), logistic, rng);
  });
}

IlmsModel IlmsModel::bind(const ParamStore& store, const IlmsConfig& config, const std::string& prefix) {
  return build(config, prefix, [&](const std::string& name, std::vector<std::size_t> dims, bool logistic) {
    return Mlp::bind(store, name, std::move(dims), logistic);
  });
}

GraphState IlmsModel::inputs(ad::Tape& tape, const graph::AssignmentGraph& g) {
  return GraphState{tape.constant(g.instance_nodes), tape.constant(g.label_nodes),
                    tape.constant(g.instance_edge_attr), tape.constant(g.label_edge_attr),
                    tape.constant(g.matching_edge_attr)};
}

GraphState IlmsModel::encode(const graph::AssignmentGraph& g, const GraphState& attrs) const {
  ad::Tape& tape = attrs.instance_nodes.tape();
  if (attrs.matching_edges.value().rows() != g.num_instances() * g.num_labels())
    throw ShapeError("matching edge count does not match the assignment graph");
  return GraphState{encode_instance_node_.forward(tape, attrs.instance_nodes),
                    encode_label_node_.forward(tape, attrs.label_nodes),
                    encode_instance_edge_.forward(tape, attrs.instance_edges),
                    encode_label_edge_.forward(tape, attrs.label_edges),
                    encode_matching_edge_.forward(tape, attrs.matching_edges)};
}

GraphState IlmsModel::node_convolution(const graph::AssignmentGraph& g, const GraphState& s, std::size_t b) const {
  const Block& blk = blocks_.at(b);
  ad::Tape& tape = s.instance_nodes.tape();
  const std::size_t n = g.num_instances(), c = g.num_labels();
  const EdgeIndex inst = split(g.instance_edges);
  const EdgeIndex lab = split(g.label_edges);
  const EdgeIndex match = matching_endpoints(g);

  // Instance nodes: messages from instance neighbours (incoming edges) and all labels.
  ad::Var inst_from_inst = ad::segment_mean(
      blk.instance_edge_message.forward(tape, ad::concat_cols({s.instance_edges, ad::gather_rows(s.instance_nodes, inst.src)})),
      inst.dst, n);
  ad::Var inst_from_label = ad::segment_mean(
      blk.instance_match_message.forward(tape, ad::concat_cols({s.matching_edges, ad::gather_rows(s.label_nodes, match.dst)})),
      match.src, n);

  // Label nodes: messages from other labels and from all instances.
  ad::Var label_from_label = ad::segment_mean(
      blk.label_edge_message.forward(tape, ad::concat_cols({s.label_edges, ad::gather_rows(s.label_nodes, lab.src)})),
      lab.dst, c);
  ad::Var label_from_inst = ad::segment_mean(
      blk.label_match_message.forward(tape, ad::concat_cols({s.matching_edges, ad::gather_rows(s.instance_nodes, match.src)})),
      match.dst, c);

  GraphState out = s;
  out.instance_nodes =
      blk.instance_update.forward(tape, ad::concat_cols({s.instance_nodes, inst_from_inst, inst_from_label}));
  out.label_nodes = blk.label_update.forward(tape, ad::concat_cols({s.label_nodes, label_from_label, label_from_inst}));
  return out;
}

GraphState IlmsModel::edge_convolution(const graph::AssignmentGraph& g, const GraphState& s, std::size_t b) const {
  const Block& blk = blocks_.at(b);
  ad::Tape& tape = s.instance_nodes.tape();
  const EdgeIndex inst = split(g.instance_edges);
  const EdgeIndex lab = split(g.label_edges);
  const EdgeIndex match = matching_endpoints(g);

  GraphState out = s;
  ad::Var inst_hat = blk.instance_edge_gather.forward(
      tape, ad::concat_cols({ad::gather_rows(s.instance_nodes, inst.src), ad::gather_rows(s.instance_nodes, inst.dst)}));
  out.instance_edges = blk.instance_edge_update.forward(tape, ad::concat_cols({s.instance_edges, inst_hat}));

  ad::Var label_hat = blk.label_edge_gather.forward(
      tape, ad::concat_cols({ad::gather_rows(s.label_nodes, lab.src), ad::gather_rows(s.label_nodes, lab.dst)}));
  out.label_edges = blk.label_edge_update.forward(tape, ad::concat_cols({s.label_edges, label_hat}));

  ad::Var match_hat = blk.matching_edge_gather.forward(
      tape, ad::concat_cols({ad::gather_rows(s.instance_nodes, match.src), ad::gather_rows(s.label_nodes, match.dst)}));
  out.matching_edges = blk.matching_edge_update.forward(tape, ad::concat_cols({s.matching_edges, match_hat}));
  return out;
}

ad::Var IlmsModel::decode(const graph::AssignmentGraph& g, const GraphState& s) const {
  ad::Tape& tape = s.matching_edges.tape();
  return ad::reshape(decoder_.forward(tape, s.matching_edges), g.num_instances(), g.num_labels());
}

ad::Var IlmsModel::forward(const graph::AssignmentGraph& g, const GraphState& attrs) const {
  GraphState s = encode(g, attrs);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    s = node_convolution(g, s, b);
    s = edge_convolution(g, s, b);
  }
  return decode(g, s);
}

ad::Var IlmsModel::forward(ad::Tape& tape, const graph::AssignmentGraph& g) const {
  return forward(g, inputs(tape, g));
}

}  // namespace mlsgm::ilms
