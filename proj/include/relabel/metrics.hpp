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

// Accuracy, average precision and feature-entropy metrics.

#ifndef RELABEL_METRICS_HPP_
#define RELABEL_METRICS_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relabel/common.hpp"

namespace relabel {

struct EvalRecord {
  std::string image_id;
  Eigen::VectorXd scores;  // length K, any monotone scale
  std::vector<int> labels;  // ground truth; labels[0] is the single label
};

enum class Criterion { Single, Multi };

// Single: argmax equals labels[0]. Multi: argmax is any ground-truth label.
double top1_accuracy(std::span<const EvalRecord> records, Criterion criterion);

// Non-interpolated AP of one ranking: images sorted by score descending,
// ties by id, precision averaged over the positives' ranks. NaN without
// positives.
double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> positive,
                         std::span<const std::string> ids);

struct MapResult {
  double map = 0.0;
  std::vector<double> per_class;  // NaN for classes without positives
  int classes_used = 0;
};

// Unweighted mean of per-class AP over classes with at least one positive.
// Throws DataError when no class has a positive.
MapResult mean_ap(std::span<const EvalRecord> records);

struct SubgroupRow {
  std::string bucket;  // "1", "2", "3", ">=4"
  long size = 0;
  std::optional<double> map;  // absent for an empty bucket
};

// mAP within records grouped by ground-truth set size.
std::vector<SubgroupRow> subgroup_map(std::span<const EvalRecord> records);
std::string format_subgroup_table(std::span<const SubgroupRow> rows);

// Kozachenko-Leonenko estimate over the rows of `x` (N x d):
// (d/N) sum log max(rho_k, 1e-12) + log V_d + psi(N) - psi(k).
double knn_entropy(const Eigen::MatrixXd& x, int k = 3);

}  // namespace relabel

#endif  // RELABEL_METRICS_HPP_
