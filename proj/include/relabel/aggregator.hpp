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

// Per-mask predictions to image-level multi-labels.

#ifndef RELABEL_AGGREGATOR_HPP_
#define RELABEL_AGGREGATOR_HPP_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relabel/labeler.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel {

enum class LocalMode { LocalHard, LocalSoft };
enum class GlobalMode { None, Original, Pred };

std::string to_string(LocalMode m);
LocalMode parse_local_mode(std::string_view s);
std::string to_string(GlobalMode m);
GlobalMode parse_global_mode(std::string_view s);

struct AggregationPolicy {
  LocalMode mode = LocalMode::LocalSoft;
  double tau = 0.5;  // LocalHard threshold (strict)
  GlobalMode global = GlobalMode::None;
  double report_threshold = 0.5;

  void validate() const;
  Strategy strategy() const;
};

struct ClassConfidence {
  int class_id = 0;
  double confidence = 0.0;
  std::optional<MaskRef> mask;
};

// Unique top-1 classes with their highest confidence, sorted by class id.
// Equal confidences resolve to the lowest iteration_index, then config_id.
std::vector<ClassConfidence> aggregate_masks(
    std::span<const RegionPrediction> preds);

// LocalHard: soft holds the deduplicated top-1 confidences and hard marks
// those above tau. LocalSoft: soft is the element-wise max of the mask
// probability vectors. Groundings cover every top-1 class.
ImageLabelSet build_local(const std::string& image_id,
                          std::span<const RegionPrediction> preds,
                          int class_count, const AggregationPolicy& policy);

// Element-wise max with the global signal: a one-hot original label or the
// whole-image class probabilities. Classes won by the global signal carry a
// mask-free grounding. Hard labels, when present, gain global entries above
// policy.tau.
ImageLabelSet merge_global(const ImageLabelSet& local,
                           const AggregationPolicy& policy,
                           std::optional<int> original_label,
                           const Eigen::VectorXd* global_probs);

struct LabelStats {
  std::array<long, 5> counts{};  // k = 0, 1, 2, 3, >= 4
  std::array<double, 5> fractions{};
  long images = 0;
  long total_labels = 0;
  double average = 0.0;  // total_labels / images
};

// Classes with soft >= threshold per image.
int label_count(const ImageLabelSet& labels, double threshold = 0.5);
LabelStats label_stats(std::span<const ImageLabelSet> data,
                       double threshold = 0.5);
std::string format_stats_table(const LabelStats& stats);

}  // namespace relabel

#endif  // RELABEL_AGGREGATOR_HPP_
