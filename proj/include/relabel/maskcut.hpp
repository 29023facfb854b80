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

// Object discovery by iterative normalized cuts over the patch affinity graph.

#ifndef RELABEL_MASKCUT_HPP_
#define RELABEL_MASKCUT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relabel/common.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel {

enum class Refine { None, Morphological };
enum class Eigensolver { Dense, Lanczos };

std::string to_string(Refine r);
Refine parse_refine(std::string_view s);
std::string to_string(Eigensolver e);
Eigensolver parse_eigensolver(std::string_view s);

struct DiscoveryConfig {
  std::string preset_id = "default";
  double tau_ncut = 0.35;
  int max_proposals = 4;
  // A cut with fewer foreground patches ends the iteration.
  int min_patches = 9;
  // A cut whose normalized-cut value exceeds this is not a salient object
  // (a structureless graph scores 1) and ends the iteration.
  double max_ncut = 0.5;
  // Restrict each mask to the 4-connected component holding its seed patch.
  bool seed_component = true;
  Refine refine = Refine::None;
  int min_component_px = 4;
  Eigensolver eigensolver = Eigensolver::Lanczos;
  double lanczos_tol = 1e-10;
  int lanczos_max_iter = 1000;
  int corner_limit = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

// The four ensemble members selected by the original hyperparameter study.
// Morphological refinement stands in where that study enabled a CRF.
std::vector<DiscoveryConfig> reference_presets();

// INI file, one section per preset:
//   [name]
//   tau_ncut = 0.35
//   max_proposals = 4
//   refine = none | morphological
//   min_patches = 9
// Unlisted keys keep their defaults.
std::vector<DiscoveryConfig> load_presets(const std::filesystem::path& path);
void save_presets(const std::filesystem::path& path,
                  std::span<const DiscoveryConfig> presets);

struct AffinityGraph {
  int grid_h = 0;
  int grid_w = 0;
  Eigen::MatrixXd weights;           // n x n, symmetric
  Eigen::VectorXd degree;            // row sums of weights
  std::vector<std::uint8_t> excluded;  // 1 for nodes removed from the graph

  int node_count() const { return static_cast<int>(degree.size()); }
  std::vector<int> active_nodes() const;
};

// Thresholded cosine affinities: 1 where cos >= tau, 1e-5 below, 0 on rows
// and columns of excluded nodes. A zero-norm feature has cosine 0 with all.
AffinityGraph build_affinity(const PatchFeatureMap& fmap, double tau_ncut,
                             std::span<const std::uint8_t> excluded = {});

enum class FlipReason { None, MaxMagnitude, CornerRule };

struct CutResult {
  Eigen::VectorXd x;  // length n, zero on excluded nodes
  double lambda = 0.0;
  Mask mask;          // grid_h x grid_w
  bool flipped = false;
  FlipReason reason = FlipReason::None;
  // ||(D - W)x - lambda D x|| / ||D x|| over active nodes.
  double residual = 0.0;
  bool converged = true;
};

// Second-smallest generalized eigenpair of (D - W, D) on the active nodes,
// unit-norm with the largest-magnitude entry positive. Returns std::nullopt
// when fewer than two active nodes remain.
std::optional<CutResult> second_eigvec(const AffinityGraph& graph,
                                       const DiscoveryConfig& cfg);

// Mean-threshold bipartition followed by the foreground-side rules: the side
// must hold the max-|x| node, and must not hold more than `corner_limit` grid
// corners unless both sides do. `active` (optional, length n) limits the
// mean and the mask to unexcluded nodes.
CutResult select_foreground(const Eigen::VectorXd& x, int grid_h, int grid_w,
                            int corner_limit,
                            std::span<const std::uint8_t> active = {});

// Normalized-cut value of `mask` against the rest of the active graph.
// Infinite when either side is empty.
double ncut_value(const AffinityGraph& graph, const Mask& mask);

// The 4-connected component of `mask` containing flat index `seed`.
Mask seed_component(const Mask& mask, int seed);

std::vector<MaskProposal> discover(const PatchFeatureMap& fmap,
                                   const DiscoveryConfig& cfg);

// Bilinear upsample of the 0/1 patch mask thresholded at 0.5; Morphological
// adds a 3x3 opening and closing and drops 8-connected components smaller
// than min_component_px.
Mask refine_mask(const Mask& patch_mask, int target_h, int target_w,
                 Refine mode, int min_component_px = 4);

// Discovers and attaches pixel masks at image resolution.
std::vector<MaskProposal> discover_with_pixels(const PatchFeatureMap& fmap,
                                               const DiscoveryConfig& cfg,
                                               int image_h, int image_w);

double mask_iou(const Mask& a, const Mask& b);

struct SweepImage {
  PatchFeatureMap features;
  int image_h = 0;
  int image_w = 0;
  std::vector<Mask> gt_masks;  // pixel resolution
};

struct RecallRow {
  std::string preset_id;
  int matched = 0;
  int total = 0;
  double recall = 0.0;
};

// Object recall at IoU >= 0.5 per preset, sorted by recall descending then
// preset id.
std::vector<RecallRow> sweep(std::span<const DiscoveryConfig> configs,
                             std::span<const SweepImage> images,
                             int workers = 1);
std::string format_recall_table(std::span<const RecallRow> rows);

}  // namespace relabel

#endif  // RELABEL_MASKCUT_HPP_
