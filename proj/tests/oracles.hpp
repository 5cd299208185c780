// Copyright 2026 The mlsgm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Independent reference implementations used to cross-check the library.
// They favour obviousness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "mlsgm/csac.hpp"
#include "mlsgm/graph.hpp"
#include "mlsgm/tensor.hpp"

namespace mlsgm::oracle {

/// Largest 8-connected component above 0.2 * max, found with union-find.
inline csac::BBox localize(const Tensor& map) {
  const std::size_t h = map.rows(), w = map.cols();
  double peak = map(0, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) peak = std::max(peak, map(r, c));
  if (peak <= 0.0) return csac::BBox{0, 0, 1, 1};
  std::vector<std::size_t> parent(h * w);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  auto on = [&](std::size_t r, std::size_t c) { return map(r, c) > 0.2 * peak; };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      if (!on(r, c)) continue;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
          if (!on(rr, cc)) continue;
          parent[find(r * w + c)] = find(static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc));
        }
    }
  std::vector<std::size_t> size(h * w, 0), first(h * w, h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!on(i / w, i % w)) continue;
    const auto root = find(i);
    ++size[root];
    first[root] = std::min(first[root], i);
  }
  std::size_t best = h * w;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (size[i] == 0) continue;
    if (best == h * w || size[i] > size[best] || (size[i] == size[best] && first[i] < first[best])) best = i;
  }
  std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!on(i / w, i % w) || find(i) != best) continue;
    r0 = std::min(r0, i / w);
    r1 = std::max(r1, i / w);
    c0 = std::min(c0, i % w);
    c1 = std::max(c1, i % w);
  }
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  return csac::BBox{static_cast<double>(c0) / W, static_cast<double>(r0) / H, static_cast<double>(c1 - c0 + 1) / W,
                    static_cast<double>(r1 - r0 + 1) / H};
}

/// For each node, its k' nearest neighbours by repeated minimum search.
inline std::vector<graph::Edge> knn(const std::vector<csac::BBox>& boxes, std::size_t k) {
  std::vector<graph::Edge> out;
  const std::size_t n = boxes.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> taken(n, false);
    taken[i] = true;
    for (std::size_t round = 0; round < std::min(k, n == 0 ? 0 : n - 1); ++round) {
      std::optional<std::size_t> pick;
      double best = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (taken[j]) continue;
        const double dx = boxes[i].center_x() - boxes[j].center_x();
        const double dy = boxes[i].center_y() - boxes[j].center_y();
        const double d = std::sqrt(dx * dx + dy * dy);
        if (!pick || d < best) {
          pick = j;
          best = d;
        }
      }
      taken[*pick] = true;
      out.push_back(graph::Edge{i, *pick});
    }
  }
  return out;
}

/// feature[d] = sum over cells of map * F[d].
inline std::vector<double> pool(const Tensor& features, const Tensor& map) {
  const std::size_t d = features.shape()[0], h = features.shape()[1], w = features.shape()[2];
  std::vector<double> out(d, 0.0);
  for (std::size_t ch = 0; ch < d; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[ch] += map(y, x) * features.at(ch, y, x);
  return out;
}

/// Average precision by enumerating, for every positive (truth == 1), the
/// precision over all items ranked no later (ties broken by index).
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& truth) {
  const std::size_t n = scores.size();
  double total = 0.0;
  std::size_t positives = 0;
  auto ahead = [&](std::size_t a, std::size_t b) {  // a ranked no later than b
    return scores[a] > scores[b] || (scores[a] == scores[b] && a <= b);
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (truth[i] != 1) continue;
    ++positives;
    std::size_t rank = 0, hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!ahead(j, i)) continue;
      ++rank;
      if (truth[j] == 1) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(positives);
}

}  // namespace mlsgm::oracle
