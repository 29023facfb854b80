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

#include "relabel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>

namespace relabel {

namespace {

constexpr double kDistanceFloor = 1e-12;

int class_count_of(std::span<const EvalRecord> records) {
  if (records.empty()) return 0;
  const auto k = records.front().scores.size();
  for (const auto& r : records) {
    if (r.scores.size() != k) throw DataError("eval: score lengths differ");
    for (int c : r.labels) {
      if (c < 0 || c >= k) throw DataError("eval: label out of range");
    }
  }
  return static_cast<int>(k);
}

}  // namespace

double top1_accuracy(std::span<const EvalRecord> records, Criterion criterion) {
  if (records.empty()) throw DataError("top1_accuracy: no records");
  class_count_of(records);
  long correct = 0;
  for (const auto& r : records) {
    if (r.labels.empty()) throw DataError("top1_accuracy: empty label set");
    const int top = static_cast<int>(argmax_lowest(r.scores));
    if (criterion == Criterion::Single) {
      correct += top == r.labels.front();
    } else {
      correct += std::find(r.labels.begin(), r.labels.end(), top) != r.labels.end();
    }
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> positive,
                         std::span<const std::string> ids) {
  const std::size_t n = scores.size();
  if (positive.size() != n || ids.size() != n) {
    throw DataError("average_precision: input lengths differ");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  double sum = 0.0;
  long hits = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (!positive[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(hits);
}

MapResult mean_ap(std::span<const EvalRecord> records) {
  const int k = class_count_of(records);
  MapResult out;
  out.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.image_id);
  std::vector<double> scores(records.size());
  std::vector<std::uint8_t> positive(records.size());
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      scores[i] = records[i].scores(c);
      const auto& l = records[i].labels;
      positive[i] = std::find(l.begin(), l.end(), c) != l.end();
    }
    const double ap = average_precision(scores, positive, ids);
    out.per_class[c] = ap;
    if (!std::isnan(ap)) {
      sum += ap;
      ++out.classes_used;
    }
  }
  if (out.classes_used == 0) throw DataError("mean_ap: no positive labels");
  out.map = sum / out.classes_used;
  return out;
}

std::vector<SubgroupRow> subgroup_map(std::span<const EvalRecord> records) {
  std::vector<std::vector<EvalRecord>> buckets(4);
  for (const auto& r : records) {
    if (r.labels.empty()) throw DataError("subgroup_map: empty label set");
    std::vector<int> unique = r.labels;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    buckets[std::min<std::size_t>(unique.size(), 4) - 1].push_back(r);
  }
  static const char* kNames[] = {"1", "2", "3", ">=4"};
  std::vector<SubgroupRow> out;
  for (int b = 0; b < 4; ++b) {
    SubgroupRow row;
    row.bucket = kNames[b];
    row.size = static_cast<long>(buckets[b].size());
    if (!buckets[b].empty()) row.map = mean_ap(buckets[b]).map;
    out.push_back(row);
  }
  return out;
}

std::string format_subgroup_table(std::span<const SubgroupRow> rows) {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%-6s %8s %10s\n", "k", "images", "mAP");
  out << buf;
  for (const auto& r : rows) {
    if (r.map) {
      std::snprintf(buf, sizeof(buf), "%-6s %8ld %10.4f\n", r.bucket.c_str(),
                    r.size, *r.map);
    } else {
      std::snprintf(buf, sizeof(buf), "%-6s %8ld %10s\n", r.bucket.c_str(),
                    r.size, "-");
    }
    out << buf;
  }
  return out.str();
}

double knn_entropy(const Eigen::MatrixXd& x, int k) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (k < 1 || n <= k || d < 1) {
    throw DataError("knn_entropy: need N > k >= 1 and d >= 1");
  }
  if (!x.allFinite()) throw DataError("knn_entropy: non-finite features");
  double log_sum = 0.0;
  std::vector<double> dist(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index m = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist[m++] = (x.row(i) - x.row(j)).squaredNorm();
    }
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    log_sum += std::log(std::max(std::sqrt(dist[k - 1]), kDistanceFloor));
  }
  const double half_d = 0.5 * static_cast<double>(d);
  const double log_unit_ball =
      half_d * std::log(std::numbers::pi) - std::lgamma(half_d + 1.0);
  return static_cast<double>(d) * log_sum / static_cast<double>(n) +
         log_unit_ball + boost::math::digamma(static_cast<double>(n)) -
         boost::math::digamma(static_cast<double>(k));
}

}  // namespace relabel
