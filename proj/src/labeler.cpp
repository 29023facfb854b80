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

#include "relabel/labeler.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace relabel {

namespace {

using Json = nlohmann::json;

// Momentum buffers share the head layout.
void sgd_update(Eigen::Ref<Eigen::MatrixXd> param,
                Eigen::Ref<const Eigen::MatrixXd> grad,
                Eigen::Ref<Eigen::MatrixXd> buf, const TrainConfig& cfg,
                double lr, bool decay) {
  Eigen::MatrixXd g = grad;
  if (decay && cfg.weight_decay != 0.0) g += cfg.weight_decay * param;
  buf = cfg.momentum * buf + g;
  if (cfg.nesterov) {
    param -= lr * (g + cfg.momentum * buf);
  } else {
    param -= lr * buf;
  }
}

Eigen::MatrixXd overlap_weights(int cells, int grid) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(cells, grid);
  for (int r = 0; r < cells; ++r) {
    const double lo = static_cast<double>(r) * grid / cells;
    const double hi = static_cast<double>(r + 1) * grid / cells;
    for (int i = 0; i < grid; ++i) {
      const double w = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (w > 0.0) a(r, i) = w;
    }
  }
  return a;
}

Json head_metadata(const LabelerHead& head, const TrainConfig& cfg) {
  return Json{{"format", "relabel-head"},
              {"dim", head.dim()},
              {"hidden", head.hidden()},
              {"classes", head.classes()},
              {"activation", to_string(head.activation)},
              {"seed", head.seed},
              {"config_hash", hex64(fnv1a64(cfg.canonical()))},
              {"config", cfg.canonical()}};
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::ReLU ? "relu" : "identity";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw DataError("unknown activation '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1 || hidden < 1 || warmup_epochs < 0) {
    throw DataError("train config: epochs, batch_size, hidden out of range");
  }
  if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) ||
      !(weight_decay >= 0.0)) {
    throw DataError("train config: bad optimizer settings");
  }
  if (!(patch_dropout >= 0.0 && patch_dropout < 1.0)) {
    throw DataError("train config: patch_dropout must lie in [0,1)");
  }
  if (!(tau_sel > 0.0 && tau_sel < 1.0)) {
    throw DataError("train config: tau_sel must lie in (0,1)");
  }
}

std::string TrainConfig::canonical() const {
  std::ostringstream out;
  out.precision(17);
  out << "epochs=" << epochs << ";lr=" << lr << ";momentum=" << momentum
      << ";nesterov=" << nesterov << ";weight_decay=" << weight_decay
      << ";warmup_epochs=" << warmup_epochs << ";batch_size=" << batch_size
      << ";patch_dropout=" << patch_dropout << ";tau_sel=" << tau_sel
      << ";hidden=" << hidden << ";activation=" << to_string(activation)
      << ";seed=" << seed;
  return out.str();
}

RowMatrix<float> gather_patches(const PatchFeatureMap& fmap,
                                const Mask& patch_mask) {
  if (patch_mask.rows() != fmap.grid_h || patch_mask.cols() != fmap.grid_w) {
    throw DataError("patch mask shape does not match the feature grid");
  }
  RowMatrix<float> rows(mask_count(patch_mask), fmap.dim());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < patch_mask.size(); ++i) {
    if (patch_mask.data()[i]) rows.row(r++) = fmap.features.row(i);
  }
  return rows;
}

Eigen::VectorXd pool_rows(const RowMatrix<float>& rows, double dropout_frac,
                          Rng* rng) {
  const auto n = rows.rows();
  if (n == 0) throw DataError("pooling over an empty mask");
  std::vector<std::uint8_t> keep(n, 1);
  if (dropout_frac > 0.0) {
    if (rng == nullptr) throw DataError("patch dropout needs an rng");
    const auto drop = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(std::floor(dropout_frac * n)), n - 1);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first `drop` slots are a uniform subset.
    for (Eigen::Index i = 0; i < drop; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
      std::swap(order[i], order[pick(*rng)]);
      keep[order[i]] = 0;
    }
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows.cols());
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    sum += rows.row(i).transpose().cast<double>();
    ++count;
  }
  return sum / static_cast<double>(count);
}

Eigen::VectorXd masked_pool(const PatchFeatureMap& fmap, const Mask& patch_mask,
                            double dropout_frac, Rng* rng) {
  return pool_rows(gather_patches(fmap, patch_mask), dropout_frac, rng);
}

Eigen::VectorXd global_average_pool(const PatchFeatureMap& fmap) {
  return pool_rows(fmap.features, 0.0, nullptr);
}

double loss_and_gradient(const LabelerHead& head, const RowMatrix<double>& z,
                         std::span<const int> labels, LabelerHead* grad) {
  const auto b = z.rows();
  if (b == 0 || static_cast<std::size_t>(b) != labels.size()) {
    throw DataError("loss: batch and label counts differ");
  }
  const RowMatrix<double> pre = head.hidden_pre(z);
  const RowMatrix<double> h = head.activate(pre);
  const RowMatrix<double> logits =
      (h * head.w2).rowwise() + head.b2.transpose();

  RowMatrix<double> dlogits(b, logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw DataError("loss: label out of range");
    const double shift = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - shift).exp().matrix();
    const double total = e.sum();
    loss += std::log(total) + shift - logits(i, y);
    dlogits.row(i) = e / total;
    dlogits(i, y) -= 1.0;
  }
  loss /= static_cast<double>(b);
  if (grad == nullptr) return loss;

  dlogits /= static_cast<double>(b);
  grad->activation = head.activation;
  grad->seed = head.seed;
  grad->w2 = h.transpose() * dlogits;
  grad->b2 = dlogits.colwise().sum().transpose();
  RowMatrix<double> dpre = dlogits * head.w2.transpose();
  if (head.activation == Activation::ReLU) {
    dpre = (pre.array() > 0.0).select(dpre, 0.0);
  }
  grad->w1 = z.transpose() * dpre;
  grad->b1 = dpre.colwise().sum().transpose();
  return loss;
}

double scheduled_lr(const TrainConfig& cfg, long step, long warmup_steps,
                    long total_steps) {
  if (step < warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup_steps);
  }
  const long span = total_steps - warmup_steps;
  if (span <= 0) return cfg.lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train(LabelerHead head, std::span<const TrainSample> data,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  for (const auto& s : data) {
    if (s.patches.rows() == 0 || s.patches.cols() != head.dim()) {
      throw DataError("train: sample shape does not match the head");
    }
    if (s.label < 0 || s.label >= head.classes()) {
      throw DataError("train: label out of range");
    }
  }
  const long n = static_cast<long>(data.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  const long warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  LabelerHead buf = head;
  buf.w1.setZero();
  buf.b1.setZero();
  buf.w2.setZero();
  buf.b2.setZero();
  LabelerHead grad;

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (long batch = 0; batch < steps_per_epoch; ++batch) {
      const long begin = batch * cfg.batch_size;
      const long end = std::min(n, begin + cfg.batch_size);
      RowMatrix<double> z(end - begin, head.dim());
      std::vector<int> labels(end - begin);
      for (long i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        Rng drop_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1,
                              idx + 1));
        z.row(i - begin) =
            pool_rows(data[idx].patches, cfg.patch_dropout, &drop_rng)
                .transpose();
        labels[i - begin] = data[idx].label;
      }
      const double loss = loss_and_gradient(head, z, labels, &grad);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch));
      }
      epoch_loss += loss;
      const double lr = scheduled_lr(cfg, step, warmup_steps, total_steps);
      sgd_update(head.w1, grad.w1, buf.w1, cfg, lr, true);
      sgd_update(head.b1, grad.b1, buf.b1, cfg, lr, false);
      sgd_update(head.w2, grad.w2, buf.w2, cfg, lr, true);
      sgd_update(head.b2, grad.b2, buf.b2, cfg, lr, false);
      ++step;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  if (!head.all_finite()) throw NumericError("training produced non-finite weights");
  result.head = std::move(head);
  return result;
}

double train_accuracy(const LabelerHead& head,
                      std::span<const TrainSample> data) {
  if (data.empty()) return 0.0;
  long correct = 0;
  for (const auto& s : data) {
    const Eigen::VectorXd logits = head.forward(pool_rows(s.patches, 0.0, nullptr));
    if (argmax_lowest(logits) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void save_head(const std::filesystem::path& path, const LabelerHead& head,
               const TrainConfig& cfg) {
  auto pack = [](const auto& m) {
    // Row-major payload regardless of Eigen storage order.
    const RowMatrix<float> rm = m.template cast<float>();
    std::vector<std::uint64_t> shape{static_cast<std::uint64_t>(rm.rows())};
    if (rm.cols() != 1) shape.push_back(static_cast<std::uint64_t>(rm.cols()));
    return Tensor::from_f32(std::move(shape),
                            std::span<const float>(rm.data(), rm.size()));
  };
  const std::vector<Tensor> bundle{
      Tensor::from_text(head_metadata(head, cfg).dump()), pack(head.w1),
      pack(head.b1), pack(head.w2), pack(head.b2)};
  write_bundle(path, bundle);
}

LabelerHead load_head(const std::filesystem::path& path) {
  const auto bundle = read_bundle(path);
  if (bundle.size() != 5 || bundle[0].dtype != DType::U8) {
    throw DataError(path.string() + ": not a head checkpoint");
  }
  Json meta;
  try {
    meta = Json::parse(bundle[0].to_text());
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  if (meta.value("format", "") != "relabel-head") {
    throw DataError(path.string() + ": not a head checkpoint");
  }
  const int dim = meta.at("dim").get<int>();
  const int hidden = meta.at("hidden").get<int>();
  const int classes = meta.at("classes").get<int>();
  auto unpack = [&](const Tensor& t, int rows, int cols) {
    const std::uint64_t expect = static_cast<std::uint64_t>(rows) * cols;
    if (t.dtype != DType::F32 || t.element_count() != expect) {
      throw DataError(path.string() + ": checkpoint tensor has the wrong shape");
    }
    const auto v = t.to_f32();
    return Eigen::Map<const RowMatrix<float>>(v.data(), rows, cols)
        .cast<double>()
        .eval();
  };
  LabelerHead head;
  head.activation = parse_activation(meta.at("activation").get<std::string>());
  head.seed = meta.at("seed").get<std::uint64_t>();
  head.w1 = unpack(bundle[1], dim, hidden);
  head.b1 = unpack(bundle[2], hidden, 1);
  head.w2 = unpack(bundle[3], hidden, classes);
  head.b2 = unpack(bundle[4], classes, 1);
  if (!head.all_finite()) throw DataError(path.string() + ": non-finite weights");
  return head;
}

// ---------------------------------------------------------------------------

void Box::validate() const {
  const bool ok = std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) &&
                  std::isfinite(y1) && x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 &&
                  y1 <= 1.0 && x1 > x0 && y1 > y0;
  if (!ok) {
    throw DataError("box must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
  }
}

RegionPrediction make_prediction(std::string image_id, Eigen::VectorXd probs) {
  RegionPrediction p;
  p.image_id = std::move(image_id);
  p.top1 = static_cast<int>(argmax_lowest(probs));
  p.confidence = probs(p.top1);
  p.probs = std::move(probs);
  return p;
}

std::vector<std::pair<int, double>> rank_classes(const Eigen::VectorXd& probs,
                                                 int m) {
  std::vector<std::pair<int, double>> out;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    out.emplace_back(static_cast<int>(c), probs(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  if (m >= 0 && static_cast<std::size_t>(m) < out.size()) out.resize(m);
  return out;
}

RegionPrediction predict_region(const LabelerHead& head,
                                const PatchFeatureMap& fmap,
                                const Mask& patch_mask) {
  const Eigen::VectorXd z = masked_pool(fmap, patch_mask);
  return make_prediction(fmap.image_id, softmax(head.forward(z)));
}

Eigen::VectorXd box_pool(const PatchFeatureMap& fmap, const Box& box,
                         int samples) {
  box.validate();
  if (samples < 1) throw DataError("box_pool: sample count must be positive");
  auto tap = [](double u, int grid) {
    const double g = std::clamp(u * grid - 0.5, 0.0, grid - 1.0);
    const int lo = static_cast<int>(std::floor(g));
    return BilinearTap{lo, std::min(lo + 1, grid - 1), g - lo};
  };
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(fmap.dim());
  for (int i = 0; i < samples; ++i) {
    const double v = box.y0 + (i + 0.5) / samples * (box.y1 - box.y0);
    const BilinearTap ty = tap(v, fmap.grid_h);
    for (int j = 0; j < samples; ++j) {
      const double u = box.x0 + (j + 0.5) / samples * (box.x1 - box.x0);
      const BilinearTap tx = tap(u, fmap.grid_w);
      auto f = [&](int r, int c) {
        return fmap.features.row(static_cast<Eigen::Index>(r) * fmap.grid_w + c)
            .transpose()
            .cast<double>();
      };
      sum += (1 - ty.t) * ((1 - tx.t) * f(ty.lo, tx.lo) + tx.t * f(ty.lo, tx.hi)) +
             ty.t * ((1 - tx.t) * f(ty.hi, tx.lo) + tx.t * f(ty.hi, tx.hi));
    }
  }
  return sum / static_cast<double>(samples * samples);
}

RegionPrediction predict_box(const LabelerHead& head,
                             const PatchFeatureMap& fmap, const Box& box,
                             int samples) {
  RegionPrediction p = make_prediction(
      fmap.image_id, softmax(head.forward(box_pool(fmap, box, samples))));
  p.box = box;
  return p;
}

Eigen::VectorXd pooled_logit_score(const Mask& pixel_mask,
                                   const RowMatrix<float>& z) {
  if (z.rows() != pixel_mask.size()) {
    throw DataError("pooled_logit_score: logit map and mask sizes differ");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(z.cols());
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < pixel_mask.size(); ++i) {
    if (!pixel_mask.data()[i]) continue;
    sum += z.row(i).transpose().cast<double>();
    ++count;
  }
  if (count == 0) throw DataError("pooled_logit_score: empty mask");
  if (!sum.allFinite()) throw DataError("pooled_logit_score: non-finite logits");
  return softmax(Eigen::VectorXd(sum / static_cast<double>(count)));
}

Eigen::VectorXd pooled_logit_score(const Mask& pixel_mask, const LogitMap& lm) {
  const int h = static_cast<int>(pixel_mask.rows());
  const int w = static_cast<int>(pixel_mask.cols());
  const RowMatrix<float> dense = densify_logits(lm);
  // Each foreground pixel's bilinear weights, accumulated per source cell.
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(lm.cell_count());
  std::vector<BilinearTap> xs(w);
  for (int x = 0; x < w; ++x) xs[x] = bilinear_tap(x, lm.cell_w, w);
  Eigen::Index count = 0;
  for (int y = 0; y < h; ++y) {
    const BilinearTap ty = bilinear_tap(y, lm.cell_h, h);
    for (int x = 0; x < w; ++x) {
      if (!pixel_mask(y, x)) continue;
      const BilinearTap& tx = xs[x];
      const int top = ty.lo * lm.cell_w;
      const int bottom = ty.hi * lm.cell_w;
      weight(top + tx.lo) += (1 - ty.t) * (1 - tx.t);
      weight(top + tx.hi) += (1 - ty.t) * tx.t;
      weight(bottom + tx.lo) += ty.t * (1 - tx.t);
      weight(bottom + tx.hi) += ty.t * tx.t;
      ++count;
    }
  }
  if (count == 0) throw DataError("pooled_logit_score: empty mask");
  const Eigen::VectorXd v =
      dense.cast<double>().transpose() * weight / static_cast<double>(count);
  return softmax(v);
}

FilterResult filter_proposals(std::span<const MaskProposal> proposals,
                              const std::map<std::string, LogitMap>& logit_maps,
                              const std::map<std::string, int>& labels,
                              double tau_sel) {
  FilterResult out;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const MaskProposal& p = proposals[i];
    const auto lm = logit_maps.find(p.image_id);
    const auto label = labels.find(p.image_id);
    if (lm == logit_maps.end() || label == labels.end()) {
      ++out.skipped_images;
      continue;
    }
    if (!p.pixel_mask) {
      throw DataError("filter_proposals: proposal for " + p.image_id +
                      " has no pixel mask");
    }
    if (label->second < 0 || label->second >= lm->second.class_count) {
      throw DataError("filter_proposals: label out of range for " + p.image_id);
    }
    ProposalScore s;
    s.index = i;
    s.score = pooled_logit_score(*p.pixel_mask, lm->second)(label->second);
    s.kept = s.score > tau_sel;
    if (s.kept) out.kept.push_back(p);
    out.scores.push_back(s);
  }
  return out;
}

MaskFilterResult filter_by_confidence(std::span<const double> confidences,
                                      double tau) {
  MaskFilterResult out;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    (confidences[i] >= tau ? out.kept : out.dropped).push_back(i);
  }
  out.kept_fraction =
      confidences.empty() ? 0.0
                          : static_cast<double>(out.kept.size()) /
                                static_cast<double>(confidences.size());
  return out;
}

MaskFilterResult filter_external_masks(
    const LabelerHead& head, std::span<const MaskProposal> masks,
    const std::map<std::string, PatchFeatureMap>& fmaps, double tau) {
  std::vector<double> conf;
  conf.reserve(masks.size());
  for (const auto& m : masks) {
    const auto f = fmaps.find(m.image_id);
    if (f == fmaps.end()) {
      throw DataError("filter_external_masks: no features for " + m.image_id);
    }
    conf.push_back(predict_region(head, f->second, m.patch_mask).confidence);
  }
  return filter_by_confidence(conf, tau);
}

LogitMap export_label_map(const LabelerHead& head, const PatchFeatureMap& fmap,
                          int cell_h, int cell_w, int k) {
  fmap.validate();
  if (cell_h < 1 || cell_w < 1) throw DataError("export: bad cell grid");
  const Eigen::MatrixXd ay = overlap_weights(cell_h, fmap.grid_h);
  const Eigen::MatrixXd ax = overlap_weights(cell_w, fmap.grid_w);
  const Eigen::MatrixXd feats = fmap.features.cast<double>();
  RowMatrix<double> pooled(static_cast<Eigen::Index>(cell_h) * cell_w, fmap.dim());
  for (int r = 0; r < cell_h; ++r) {
    for (int c = 0; c < cell_w; ++c) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(fmap.dim());
      double total = 0.0;
      for (int i = 0; i < fmap.grid_h; ++i) {
        if (ay(r, i) == 0.0) continue;
        for (int j = 0; j < fmap.grid_w; ++j) {
          const double wgt = ay(r, i) * ax(c, j);
          if (wgt == 0.0) continue;
          sum += wgt * feats.row(static_cast<Eigen::Index>(i) * fmap.grid_w + j)
                           .transpose();
          total += wgt;
        }
      }
      pooled.row(static_cast<Eigen::Index>(r) * cell_w + c) = (sum / total).transpose();
    }
  }
  const RowMatrix<float> logits = head.forward(pooled).cast<float>();
  return sparsify_logits(fmap.image_id, logits, cell_h, cell_w,
                         std::min(k, head.classes()));
}

}  // namespace relabel
