/*
 * Copyright 2026 The Relabel Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Reference implementations used only by tests. Each is written directly
// from the defining formula, without sharing code with the library.

#ifndef RELABEL_TESTS_ORACLES_HPP_
#define RELABEL_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relabel/labeler.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel::oracle {

// ---------------------------------------------------------------------------
// Normalized cut

struct DenseCut {
  double lambda = 0.0;
  double gap = 0.0;   // lambda_3 - lambda_2, infinite with two nodes
  Eigen::VectorXd x;  // unit Euclidean norm, max-|x| entry positive
};

// Second-smallest eigenpair of the pencil (D - W, D) restricted to nodes with
// non-zero degree, from Eigen's generalized solver.
inline std::optional<DenseCut> generalized_cut(const Eigen::MatrixXd& w) {
  const Eigen::Index n = w.rows();
  std::vector<Eigen::Index> nodes;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w.row(i).sum() > 0.0) nodes.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(nodes.size());
  if (m < 2) return std::nullopt;
  Eigen::MatrixXd ws(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) ws(i, j) = w(nodes[i], nodes[j]);
  }
  const Eigen::VectorXd d = ws.rowwise().sum();
  const Eigen::MatrixXd dm = d.asDiagonal();
  const Eigen::MatrixXd a = dm - ws;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(a, dm);
  DenseCut out;
  out.lambda = es.eigenvalues()(1);
  out.gap = m > 2 ? es.eigenvalues()(2) - out.lambda
                  : std::numeric_limits<double>::infinity();
  out.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) out.x(nodes[i]) = es.eigenvectors()(i, 1);
  out.x.normalize();
  Eigen::Index peak = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (std::abs(out.x(i)) > std::abs(out.x(peak))) peak = i;
  }
  if (out.x(peak) < 0) out.x = -out.x;
  return out;
}

// True when the cut and its mask are unique to within `eps`: a spectral gap
// above lambda_2, no active entry within eps of the mean, and every entry
// within eps of the peak magnitude sharing the peak's sign.
inline bool well_posed(const DenseCut& cut, const std::vector<bool>& active,
                       double eps = 1e-6) {
  if (!(cut.gap > eps)) return false;
  double sum = 0.0, peak = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < cut.x.size(); ++i) {
    if (!active[i]) continue;
    sum += cut.x(i);
    ++count;
    peak = std::max(peak, std::abs(cut.x(i)));
  }
  const double mean = sum / count;
  for (Eigen::Index i = 0; i < cut.x.size(); ++i) {
    if (!active[i]) continue;
    if (std::abs(cut.x(i) - mean) < eps) return false;
    if (std::abs(cut.x(i)) > peak - eps && cut.x(i) < 0) return false;
  }
  return true;
}

// Side of x at or above the mean of the active entries, flipped to hold the
// max-|x| node, then flipped again when it holds more than `corner_limit`
// corners and the other side does not.
inline Mask mean_threshold_mask(const Eigen::VectorXd& x, int h, int w,
                                int corner_limit,
                                const std::vector<bool>& active) {
  const int n = h * w;
  double sum = 0.0;
  int count = 0;
  int peak = -1;
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    sum += x(i);
    ++count;
    if (peak < 0 || std::abs(x(i)) > std::abs(x(peak))) peak = i;
  }
  Mask m = Mask::Zero(h, w);
  if (count == 0) return m;
  const double mean = sum / count;
  for (int i = 0; i < n; ++i) m.data()[i] = active[i] && x(i) >= mean;
  auto flip = [&](const Mask& s) {
    Mask c = Mask::Zero(h, w);
    for (int i = 0; i < n; ++i) c.data()[i] = active[i] && !s.data()[i];
    return c;
  };
  auto corners = [&](const Mask& s) {
    return int(s(0, 0) != 0) + int(s(0, w - 1) != 0) + int(s(h - 1, 0) != 0) +
           int(s(h - 1, w - 1) != 0);
  };
  if (!m.data()[peak]) m = flip(m);
  if (corners(m) > corner_limit) {
    const Mask other = flip(m);
    if (corners(other) <= corner_limit) m = other;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Pooling

// Mean feature over foreground patches, accumulated in double in row order.
inline Eigen::VectorXd masked_mean(const PatchFeatureMap& f, const Mask& m) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(f.dim());
  long count = 0;
  for (int r = 0; r < f.grid_h; ++r) {
    for (int c = 0; c < f.grid_w; ++c) {
      if (!m(r, c)) continue;
      for (int k = 0; k < f.dim(); ++k) {
        sum(k) += static_cast<double>(f.features(r * f.grid_w + c, k));
      }
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

// Half-pixel-centre bilinear sample of a (gh x gw) grid at output pixel
// (y, x) of an (h x w) image.
inline double bilinear_sample(const std::vector<double>& grid, int gh, int gw,
                              int h, int w, int y, int x) {
  auto coord = [](int i, int in, int out) {
    double s = (i + 0.5) * in / out - 0.5;
    return std::min(std::max(s, 0.0), in - 1.0);
  };
  const double sy = coord(y, gh, h);
  const double sx = coord(x, gw, w);
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, gh - 1), x1 = std::min(x0 + 1, gw - 1);
  const double ty = sy - y0, tx = sx - x0;
  return grid[y0 * gw + x0] * (1 - ty) * (1 - tx) +
         grid[y0 * gw + x1] * (1 - ty) * tx + grid[y1 * gw + x0] * ty * (1 - tx) +
         grid[y1 * gw + x1] * ty * tx;
}

// softmax of the masked mean of the sparse logit map upsampled to the mask.
inline Eigen::VectorXd pooled_logits(const Mask& mask, const LogitMap& lm) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(lm.class_count);
  for (int cls = 0; cls < lm.class_count; ++cls) {
    std::vector<double> grid(lm.cell_count(), 0.0);
    for (int cell = 0; cell < lm.cell_count(); ++cell) {
      for (int j = 0; j < lm.k; ++j) {
        if (lm.indices[cell * lm.k + j] == cls) grid[cell] = lm.logits[cell * lm.k + j];
      }
    }
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask(y, x)) continue;
        sum += bilinear_sample(grid, lm.cell_h, lm.cell_w, h, w, y, x);
        ++count;
      }
    }
    mean(cls) = sum / count;
  }
  Eigen::VectorXd e = (mean.array() - mean.maxCoeff()).exp();
  return e / e.sum();
}

// ---------------------------------------------------------------------------
// Ranking metrics

// AP by counting, for every positive, how many items and positives rank at
// or above it; precisions are summed in rank order.
inline double brute_force_ap(const std::vector<double>& s,
                             const std::vector<int>& pos,
                             const std::vector<std::string>& ids) {
  const std::size_t n = s.size();
  auto before = [&](std::size_t j, std::size_t i) {
    return s[j] > s[i] || (s[j] == s[i] && ids[j] < ids[i]);
  };
  std::vector<std::pair<long, double>> ranked;  // (rank, precision)
  for (std::size_t i = 0; i < n; ++i) {
    if (!pos[i]) continue;
    long rank = 1, hits = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !before(j, i)) continue;
      ++rank;
      hits += pos[j] != 0;
    }
    ranked.emplace_back(rank, static_cast<double>(hits) / rank);
  }
  if (ranked.empty()) return std::nan("");
  std::sort(ranked.begin(), ranked.end());
  double sum = 0.0;
  for (const auto& r : ranked) sum += r.second;
  return sum / static_cast<double>(ranked.size());
}

// ---------------------------------------------------------------------------
// Labeler

// Mean cross-entropy of the head on a batch, straight from the definition.
inline double cross_entropy(const LabelerHead& head, const RowMatrix<double>& z,
                            const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::VectorXd hdn(head.hidden());
    for (int j = 0; j < head.hidden(); ++j) {
      double a = head.b1(j);
      for (int k = 0; k < head.dim(); ++k) a += z(i, k) * head.w1(k, j);
      hdn(j) = head.activation == Activation::ReLU ? std::max(a, 0.0) : a;
    }
    Eigen::VectorXd logit(head.classes());
    for (int c = 0; c < head.classes(); ++c) {
      double a = head.b2(c);
      for (int j = 0; j < head.hidden(); ++j) a += hdn(j) * head.w2(j, c);
      logit(c) = a;
    }
    const double mx = logit.maxCoeff();
    const double lse = mx + std::log((logit.array() - mx).exp().sum());
    total += lse - logit(labels[i]);
  }
  return total / static_cast<double>(z.rows());
}

}  // namespace relabel::oracle

#endif  // RELABEL_TESTS_ORACLES_HPP_
