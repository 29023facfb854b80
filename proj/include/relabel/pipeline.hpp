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

// Batch pipeline stages over a dataset manifest. Each command reads and
// writes files only and reports what it wrote.

#ifndef RELABEL_PIPELINE_HPP_
#define RELABEL_PIPELINE_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relabel/aggregator.hpp"
#include "relabel/labeler.hpp"
#include "relabel/maskcut.hpp"
#include "relabel/metrics.hpp"
#include "relabel/resolver.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset files

// manifest.tsv columns (paths relative to the manifest's directory, "-" for
// none):
//   image_id  features  logits  label  height  width  preview
struct ManifestEntry {
  std::string image_id;
  fs::path features;
  std::optional<fs::path> logits;
  int label = 0;
  int height = 0;
  int width = 0;
  std::optional<fs::path> preview;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& image_id) const;
};

Manifest load_manifest(const fs::path& path);
// Writes paths relative to the manifest's directory when possible.
void write_manifest(const fs::path& path, const Manifest& manifest);

// gt_labels.tsv: image_id <tab> comma-separated class ids (first = label).
std::map<std::string, std::vector<int>> read_gt_labels(const fs::path& path);
void write_gt_labels(const fs::path& path,
                     const std::vector<std::pair<std::string, std::vector<int>>>& rows);

// gt_masks.tsv: image_id <tab> class <tab> pixel RLE, one object per line.
struct GtObject {
  std::string image_id;
  int class_id = 0;
  Mask pixel_mask;
};
std::vector<GtObject> read_gt_masks(const fs::path& path);
void write_gt_masks(const fs::path& path, const std::vector<GtObject>& objects);

std::vector<std::string> read_class_names(const fs::path& path);

// ---------------------------------------------------------------------------
// Synthetic planted-object dataset

struct SynthOptions {
  fs::path out_dir;
  int images = 100;
  int classes = 8;
  int dim = 32;
  int grid = 16;
  int patch_px = 4;
  double noise = 0.03;
  int uniform_every = 10;  // every n-th image has no objects (0 disables)
  double partner_prob = 0.5;  // chance a class-0 image also lists class 1
  std::uint64_t seed = 0;
  bool previews = true;
};

struct SynthImage {
  PatchFeatureMap features;
  LogitMap logits;
  int label = 0;
  std::vector<int> gt_labels;
  std::vector<GtObject> objects;  // planted rectangles at pixel resolution
  std::vector<Mask> patch_masks;  // the same rectangles at patch resolution
  int height = 0;
  int width = 0;
};

// In-memory generator: orthonormal class and background prototypes plus
// Gaussian noise; 1-3 separated rectangles per image, or a uniform image
// filled with its label's prototype.
std::vector<SynthImage> synth_images(const SynthOptions& opt);

// ---------------------------------------------------------------------------
// Commands

struct CommandReport {
  std::vector<fs::path> outputs;
  std::string summary;

  // FNV-1a over the bytes of every output, in order.
  std::string checksum() const;
};

CommandReport cmd_synth(const SynthOptions& opt);

struct DiscoverOptions {
  fs::path manifest;
  std::optional<fs::path> presets;  // reference presets when absent
  fs::path out;
  int workers = 1;
};
CommandReport cmd_discover(const DiscoverOptions& opt);

struct FilterOptions {
  fs::path manifest;
  fs::path proposals;
  fs::path out;
  double tau_sel = 0.75;
};
CommandReport cmd_filter(const FilterOptions& opt);

struct TrainOptions {
  fs::path manifest;
  fs::path proposals;  // retained proposals
  fs::path out;        // head checkpoint
  std::optional<fs::path> loss_log;
  int classes = 0;  // taken from the logit maps when 0
  TrainConfig config;
};
CommandReport cmd_train(const TrainOptions& opt);

struct RelabelOptions {
  fs::path manifest;
  fs::path proposals;
  fs::path head;
  fs::path out;  // annotation sidecar
  std::optional<fs::path> stats_out;
  AggregationPolicy policy;
  int workers = 1;
};
CommandReport cmd_relabel(const RelabelOptions& opt);

enum class ResolveMode { Prior, Pairing, Both };
std::string to_string(ResolveMode m);
ResolveMode parse_resolve_mode(std::string_view s);

struct ResolveOptions {
  fs::path labels;
  fs::path table;
  std::optional<fs::path> class_names;
  std::optional<fs::path> calibration;  // defaults to `labels`
  fs::path out;
  std::optional<fs::path> thresholds_out;
  ResolveMode mode = ResolveMode::Pairing;
  double label_threshold = 0.5;  // calibration label sets: soft >= this
};
CommandReport cmd_resolve(const ResolveOptions& opt);

struct EvalOptions {
  fs::path labels;  // sidecar whose soft vectors are the scores
  fs::path gt;      // gt_labels.tsv
  fs::path out;
  std::optional<fs::path> manifest;  // enables the feature-entropy line
  int entropy_k = 3;
};
CommandReport cmd_eval(const EvalOptions& opt);

struct SweepOptions {
  fs::path manifest;
  std::optional<fs::path> presets;
  fs::path gt_masks;
  fs::path out;
  int workers = 1;
};
CommandReport cmd_sweep(const SweepOptions& opt);

struct ExportMapsOptions {
  fs::path manifest;
  fs::path head;
  fs::path out_dir;
  int cell_h = 15;
  int cell_w = 15;
  int k = 5;
  int workers = 1;
};
CommandReport cmd_export_maps(const ExportMapsOptions& opt);

struct FilterMasksOptions {
  fs::path manifest;
  fs::path proposals;
  fs::path head;
  fs::path out;
  double tau = 0.5;
};
CommandReport cmd_filter_masks(const FilterMasksOptions& opt);

struct MinePairsOptions {
  fs::path labels;  // sidecar (soft >= threshold) or gt_labels.tsv
  fs::path out;
  std::optional<fs::path> class_names;
  long min_freq = 3;
  double threshold = 0.5;
};
CommandReport cmd_mine_pairs(const MinePairsOptions& opt);

}  // namespace relabel

#endif  // RELABEL_PIPELINE_HPP_
