// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlsgm/csac.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mlsgm/error.hpp"

namespace mlsgm::csac {

ActivationMaps activate(const Tensor& features, const Tensor& classifier_weight,
                        std::span<const double> classifier_bias, ScorePooling pooling) {
  require_rank(features, 3, "csac features");
  const auto d = features.shape()[0], h = features.shape()[1], w = features.shape()[2];
  const auto c = classifier_weight.rows();
  require_matrix(classifier_weight, c, d, "csac classifier weight");
  if (classifier_bias.size() != c) throw ShapeError("csac classifier bias length does not match classes");

  ActivationMaps out;
  out.maps = Tensor({c, h, w});
  out.class_scores.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double pooled = pooling == ScorePooling::kMean ? 0.0 : -1.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double z = classifier_bias[k];
        for (std::size_t ch = 0; ch < d; ++ch) z += classifier_weight(k, ch) * features.at(ch, y, x);
        const double v = 1.0 / (1.0 + std::exp(-std::clamp(z, -30.0, 30.0)));
        out.maps.at(k, y, x) = v;
        pooled = pooling == ScorePooling::kMean ? pooled + v : std::max(pooled, v);
      }
    out.class_scores[k] = pooling == ScorePooling::kMean ? pooled / static_cast<double>(h * w) : pooled;
  }
  return out;
}

std::vector<double> pool_instance(const Tensor& features, const Tensor& map) {
  require_rank(features, 3, "csac features");
  const auto d = features.shape()[0], h = features.shape()[1], w = features.shape()[2];
  require_matrix(map, h, w, "activation map");
  std::vector<double> out(d, 0.0);
  for (std::size_t ch = 0; ch < d; ++ch) {
    double acc = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) acc += map(y, x) * features.at(ch, y, x);
    out[ch] = acc;
  }
  return out;
}

BBox localize(const Tensor& map, double relative_threshold) {
  if (map.rank() != 2) throw ShapeError("localize: expected an H x W map");
  const std::size_t h = map.rows(), w = map.cols();
  if (h == 0 || w == 0) throw ShapeError("localize: empty map");
  const double peak = *std::max_element(map.data().begin(), map.data().end());
  if (!(peak > 0.0)) return BBox{};
  const double threshold = relative_threshold * peak;

  std::vector<int> label(h * w, -1);
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  std::size_t best_size = 0;
  std::size_t best_r0 = 0, best_r1 = 0, best_c0 = 0, best_c1 = 0;
  int next_label = 0;
  // Row-major scan: components are discovered in order of their top-left cell,
  // so a strict size comparison keeps the lexicographically smallest on ties.
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      if (label[r * w + c] >= 0 || !(map(r, c) > threshold)) continue;
      const int id = next_label++;
      std::size_t size = 0, r0 = r, r1 = r, c0 = c, c1 = c;
      label[r * w + c] = id;
      stack.assign(1, {r, c});
      while (!stack.empty()) {
        auto [cr, cc] = stack.back();
        stack.pop_back();
        ++size;
        r0 = std::min(r0, cr);
        r1 = std::max(r1, cr);
        c0 = std::min(c0, cc);
        c1 = std::max(c1, cc);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if (!dr && !dc) continue;
            const auto nr = static_cast<std::ptrdiff_t>(cr) + dr;
            const auto nc = static_cast<std::ptrdiff_t>(cc) + dc;
            if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) || nc >= static_cast<std::ptrdiff_t>(w))
              continue;
            const auto idx = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
            if (label[idx] >= 0 || !(map.data()[idx] > threshold)) continue;
            label[idx] = id;
            stack.emplace_back(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc));
          }
      }
      if (size > best_size) {
        best_size = size;
        best_r0 = r0;
        best_r1 = r1;
        best_c0 = c0;
        best_c1 = c1;
      }
    }

  const auto fw = static_cast<double>(w), fh = static_cast<double>(h);
  return BBox{static_cast<double>(best_c0) / fw, static_cast<double>(best_r0) / fh,
              static_cast<double>(best_c1 - best_c0 + 1) / fw, static_cast<double>(best_r1 - best_r0 + 1) / fh};
}

std::vector<double> global_feature(const Tensor& features) {
  require_rank(features, 3, "csac features");
  const auto d = features.shape()[0];
  const auto hw = features.shape()[1] * features.shape()[2];
  std::vector<double> out(d, 0.0);
  auto data = features.data();
  for (std::size_t ch = 0; ch < d; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += data[ch * hw + p];
    out[ch] = acc / static_cast<double>(hw);
  }
  return out;
}

Tensor class_map(const ActivationMaps& acts, std::size_t c) {
  const auto h = acts.maps.shape()[1], w = acts.maps.shape()[2];
  auto src = acts.maps.data().subspan(c * h * w, h * w);
  return Tensor({h, w}, std::vector<double>(src.begin(), src.end()));
}

std::vector<std::size_t> selected_classes(std::span<const double> scores, double gamma,
                                          std::span<const std::size_t> candidates) {
  std::vector<std::size_t> pool;
  if (candidates.empty()) {
    for (std::size_t c = 0; c < scores.size(); ++c) pool.push_back(c);
  } else {
    pool.assign(candidates.begin(), candidates.end());
    std::sort(pool.begin(), pool.end());
  }
  std::vector<std::size_t> out;
  for (auto c : pool) {
    if (c >= scores.size()) throw ShapeError("candidate class out of range");
    if (scores[c] > gamma) out.push_back(c);
  }
  return out;
}

InstanceSet select_instances(const ActivationMaps& acts, const Tensor& features, double gamma,
                             std::span<const std::size_t> candidates) {
  InstanceSet set;
  set.push_back(Instance{global_feature(features), BBox{}, 1.0, kGlobalClass});
  for (auto c : selected_classes(acts.class_scores, gamma, candidates)) {
    const Tensor map = class_map(acts, c);
    set.push_back(Instance{pool_instance(features, map), localize(map), acts.class_scores[c], static_cast<int>(c)});
  }
  return set;
}

TapeActivation activate(ad::Var positions, ad::Var classifier_weight, ad::Var classifier_bias,
                        ScorePooling pooling) {
  TapeActivation out;
  out.maps = ad::sigmoid(ad::linear(positions, classifier_weight, classifier_bias));
  out.scores = pooling == ScorePooling::kMean ? ad::mean_rows(out.maps) : ad::col_max(out.maps);
  return out;
}

ad::Var pool_instances(ad::Var maps, ad::Var positions) { return ad::matmul_tn(maps, positions); }

}  // namespace mlsgm::csac
