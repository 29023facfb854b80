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

// Region classifier: proposal filtering against logit maps, masked pooling,
// the two-layer head and its trainer, and region/box inference.

#ifndef RELABEL_LABELER_HPP_
#define RELABEL_LABELER_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relabel/common.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel {

enum class Activation { ReLU, Identity };

std::string to_string(Activation a);
Activation parse_activation(std::string_view s);

// logits = act(z W1 + b1) W2 + b2
template <typename Scalar>
struct MlpHead {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Batch = RowMatrix<Scalar>;

  Mat w1;  // dim x hidden
  Vec b1;
  Mat w2;  // hidden x K
  Vec b2;
  Activation activation = Activation::ReLU;
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(w1.rows()); }
  int hidden() const { return static_cast<int>(w1.cols()); }
  int classes() const { return static_cast<int>(w2.cols()); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static MlpHead init(int dim, int hidden, int classes, std::uint64_t seed,
                      Activation act = Activation::ReLU) {
    if (dim < 1 || hidden < 1 || classes < 1) {
      throw DataError("MlpHead: dimensions must be positive");
    }
    MlpHead h;
    h.activation = act;
    h.seed = seed;
    Rng rng(seed);
    auto fill = [&rng](auto& m, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          m(i, j) = static_cast<Scalar>(u(rng));
        }
      }
    };
    h.w1.resize(dim, hidden);
    h.b1.resize(hidden);
    h.w2.resize(hidden, classes);
    h.b2.resize(classes);
    fill(h.w1, dim);
    fill(h.b1, dim);
    fill(h.w2, hidden);
    fill(h.b2, hidden);
    return h;
  }

  Batch hidden_pre(const Batch& z) const {
    return (z * w1).rowwise() + b1.transpose();
  }

  Batch activate(const Batch& pre) const {
    if (activation == Activation::Identity) return pre;
    return pre.cwiseMax(Scalar(0));
  }

  // z: B x dim -> B x K logits.
  Batch forward(const Batch& z) const {
    if (z.cols() != w1.rows()) throw DataError("MlpHead: feature dim mismatch");
    return (activate(hidden_pre(z)) * w2).rowwise() + b2.transpose();
  }

  Vec forward(const Vec& z) const {
    const Batch row = z.transpose();
    return forward(row).row(0).transpose();
  }

  template <typename Other>
  MlpHead<Other> cast() const {
    MlpHead<Other> out;
    out.w1 = w1.template cast<Other>();
    out.b1 = b1.template cast<Other>();
    out.w2 = w2.template cast<Other>();
    out.b2 = b2.template cast<Other>();
    out.activation = activation;
    out.seed = seed;
    return out;
  }

  bool all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() &&
           b2.allFinite();
  }
};

using LabelerHead = MlpHead<double>;

struct TrainConfig {
  int epochs = 300;
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  int warmup_epochs = 5;
  int batch_size = 64;
  double patch_dropout = 0.25;
  double tau_sel = 0.75;
  int hidden = 1024;
  Activation activation = Activation::ReLU;
  std::uint64_t seed = 0;

  void validate() const;
  // Canonical text form; its FNV-1a digest is stored in checkpoints.
  std::string canonical() const;
};

// Foreground patch rows of one retained proposal and its image label.
struct TrainSample {
  RowMatrix<float> patches;  // |M| x dim
  int label = 0;
};

// Rows of `fmap` selected by `patch_mask`, in row-major order.
RowMatrix<float> gather_patches(const PatchFeatureMap& fmap,
                                const Mask& patch_mask);

// Drops floor(frac * n) rows (at most n - 1) chosen uniformly from `rng`,
// then averages the rest in double precision, in row order.
Eigen::VectorXd pool_rows(const RowMatrix<float>& rows, double dropout_frac,
                          Rng* rng);

// Masked average of patch features over the foreground of `patch_mask`.
Eigen::VectorXd masked_pool(const PatchFeatureMap& fmap, const Mask& patch_mask,
                            double dropout_frac = 0.0, Rng* rng = nullptr);
Eigen::VectorXd global_average_pool(const PatchFeatureMap& fmap);

// Mean cross-entropy over the batch and, when `grad` is non-null, its exact
// gradient with respect to every head parameter (no weight decay).
double loss_and_gradient(const LabelerHead& head,
                         const RowMatrix<double>& z,
                         std::span<const int> labels, LabelerHead* grad);

// Learning rate at optimizer step `step` of `total_steps`: linear warmup to
// cfg.lr over `warmup_steps`, then cosine decay to 0.
double scheduled_lr(const TrainConfig& cfg, long step, long warmup_steps,
                    long total_steps);

struct TrainResult {
  LabelerHead head;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Nesterov SGD with weight decay on weights only. Batch composition and
// dropout draws are pure functions of (seed, epoch, sample). Throws
// NumericError on a non-finite loss.
TrainResult train(LabelerHead head, std::span<const TrainSample> data,
                  const TrainConfig& cfg);

// Fraction of samples whose dropout-free prediction matches the label.
double train_accuracy(const LabelerHead& head,
                      std::span<const TrainSample> data);

void save_head(const std::filesystem::path& path, const LabelerHead& head,
               const TrainConfig& cfg);
LabelerHead load_head(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Inference

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 1.0;
  double y1 = 1.0;

  // Throws DataError unless 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1.
  void validate() const;
};

struct RegionPrediction {
  std::string image_id;
  std::optional<MaskRef> mask;
  std::optional<Box> box;
  Eigen::VectorXd probs;
  int top1 = 0;
  double confidence = 0.0;
};

RegionPrediction make_prediction(std::string image_id, Eigen::VectorXd probs);

// Up to m (class, probability) pairs, by probability descending then class.
std::vector<std::pair<int, double>> rank_classes(const Eigen::VectorXd& probs,
                                                 int m);

RegionPrediction predict_region(const LabelerHead& head,
                                const PatchFeatureMap& fmap,
                                const Mask& patch_mask);

// Mean of bilinear feature samples on an S x S grid of cell centres inside
// the box (patch centres sit at (j + 0.5) / grid in normalized coordinates).
Eigen::VectorXd box_pool(const PatchFeatureMap& fmap, const Box& box,
                         int samples = 7);
RegionPrediction predict_box(const LabelerHead& head,
                             const PatchFeatureMap& fmap, const Box& box,
                             int samples = 7);

// softmax of the masked mean of `z` ((h*w) x K, already at mask resolution).
Eigen::VectorXd pooled_logit_score(const Mask& pixel_mask,
                                   const RowMatrix<float>& z);
// Same quantity with `lm` densified and bilinearly upsampled to the mask
// resolution, computed without materializing the upsampled map.
Eigen::VectorXd pooled_logit_score(const Mask& pixel_mask, const LogitMap& lm);

struct ProposalScore {
  std::size_t index = 0;  // into the input proposal list
  double score = 0.0;     // s_P(y)
  bool kept = false;
};

struct FilterResult {
  std::vector<MaskProposal> kept;
  std::vector<ProposalScore> scores;
  int skipped_images = 0;  // proposals whose image lacked a logit map or label
};

// Keeps proposals whose pooled logit score on the image label exceeds
// tau_sel. Proposals need pixel masks.
FilterResult filter_proposals(std::span<const MaskProposal> proposals,
                              const std::map<std::string, LogitMap>& logit_maps,
                              const std::map<std::string, int>& labels,
                              double tau_sel);

struct MaskFilterResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;
  double kept_fraction = 0.0;
};

// Keeps entries whose top-1 confidence is at least tau.
MaskFilterResult filter_by_confidence(std::span<const double> confidences,
                                      double tau);
MaskFilterResult filter_external_masks(
    const LabelerHead& head, std::span<const MaskProposal> masks,
    const std::map<std::string, PatchFeatureMap>& fmaps, double tau);

// Per-cell head logits over area-weighted cell pools, top-k per cell.
LogitMap export_label_map(const LabelerHead& head, const PatchFeatureMap& fmap,
                          int cell_h = 15, int cell_w = 15, int k = 5);

}  // namespace relabel

#endif  // RELABEL_LABELER_HPP_
