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

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "relabel/pipeline.hpp"

namespace relabel {

namespace {

constexpr int kBackgroundPrototypes = 4;
constexpr double kLogitScale = 8.0;
constexpr double kLogitNoise = 0.25;

struct Rect {
  int r0, c0, h, w;  // patch units

  bool separated_from(const Rect& o) const {
    // At least one empty cell between the two rectangles.
    return r0 + h + 1 <= o.r0 || o.r0 + o.h + 1 <= r0 || c0 + w + 1 <= o.c0 ||
           o.c0 + o.w + 1 <= c0;
  }
};

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

Eigen::MatrixXd prototypes(const SynthOptions& opt) {
  const int count = opt.classes + kBackgroundPrototypes;
  Rng rng(mix_seed(opt.seed, 0x70726f746fULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(opt.dim, count);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(opt.dim, count);
  return q;
}

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%04d", i);
  return buf;
}

std::string preview_pgm(const SynthImage& img) {
  std::ostringstream out;
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> px(static_cast<std::size_t>(img.width) * img.height, 40);
  if (img.objects.empty()) {
    std::fill(px.begin(), px.end(), static_cast<unsigned char>(80 + 20 * img.label));
  }
  for (const auto& o : img.objects) {
    for (Eigen::Index i = 0; i < o.pixel_mask.size(); ++i) {
      if (o.pixel_mask.data()[i]) px[i] = static_cast<unsigned char>(80 + 20 * o.class_id);
    }
  }
  out.write(reinterpret_cast<const char*>(px.data()),
            static_cast<std::streamsize>(px.size()));
  return out.str();
}

}  // namespace

std::vector<SynthImage> synth_images(const SynthOptions& opt) {
  if (opt.images < 1 || opt.classes < 2 || opt.grid < 8 || opt.patch_px < 1) {
    throw DataError("synth: images >= 1, classes >= 2, grid >= 8 required");
  }
  if (opt.classes + kBackgroundPrototypes > opt.dim) {
    throw DataError("synth: dim must hold every class and background prototype");
  }
  const Eigen::MatrixXd proto = prototypes(opt);
  const int g = opt.grid;
  const int side = g * opt.patch_px;
  const int cells = 15;

  std::vector<SynthImage> out;
  for (int i = 0; i < opt.images; ++i) {
    Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(i) + 1));
    std::normal_distribution<double> noise(0.0, opt.noise);
    SynthImage img;
    img.height = side;
    img.width = side;
    const bool uniform =
        opt.uniform_every > 0 && i % opt.uniform_every == opt.uniform_every - 1;

    // Patch class map; -1 marks background.
    std::vector<int> owner(static_cast<std::size_t>(g) * g, -1);
    std::vector<Rect> rects;
    std::vector<int> rect_class;
    int fill_proto = 0;
    if (uniform) {
      img.label = std::uniform_int_distribution<int>(0, opt.classes - 1)(rng);
      fill_proto = img.label;
    } else {
      fill_proto = opt.classes +
                   std::uniform_int_distribution<int>(0, kBackgroundPrototypes - 1)(rng);
      const int wanted = std::uniform_int_distribution<int>(1, 3)(rng);
      std::vector<int> classes(opt.classes);
      for (int c = 0; c < opt.classes; ++c) classes[c] = c;
      std::shuffle(classes.begin(), classes.end(), rng);
      std::uniform_int_distribution<int> extent(3, 6);
      for (int attempt = 0; attempt < 400 && static_cast<int>(rects.size()) < wanted;
           ++attempt) {
        Rect r{0, 0, extent(rng), extent(rng)};
        r.r0 = std::uniform_int_distribution<int>(1, g - 1 - r.h)(rng);
        r.c0 = std::uniform_int_distribution<int>(1, g - 1 - r.w)(rng);
        bool ok = true;
        for (const auto& o : rects) ok = ok && r.separated_from(o);
        if (!ok) continue;
        rects.push_back(r);
        rect_class.push_back(classes[rects.size() - 1]);
      }
      std::size_t largest = 0;
      for (std::size_t k = 1; k < rects.size(); ++k) {
        if (rects[k].h * rects[k].w > rects[largest].h * rects[largest].w) largest = k;
      }
      img.label = rect_class[largest];
      for (std::size_t k = 0; k < rects.size(); ++k) {
        const Rect& r = rects[k];
        Mask patch = Mask::Zero(g, g);
        patch.block(r.r0, r.c0, r.h, r.w).setOnes();
        Mask pixel = Mask::Zero(side, side);
        pixel.block(r.r0 * opt.patch_px, r.c0 * opt.patch_px, r.h * opt.patch_px,
                    r.w * opt.patch_px)
            .setOnes();
        for (int y = r.r0; y < r.r0 + r.h; ++y) {
          for (int x = r.c0; x < r.c0 + r.w; ++x) owner[y * g + x] = rect_class[k];
        }
        img.patch_masks.push_back(std::move(patch));
        img.objects.push_back(GtObject{"", rect_class[k], std::move(pixel)});
      }
    }

    img.features.image_id = image_name(i);
    img.features.grid_h = g;
    img.features.grid_w = g;
    img.features.source_tag = "synthetic";
    img.features.features.resize(static_cast<Eigen::Index>(g) * g, opt.dim);
    for (int p = 0; p < g * g; ++p) {
      const int col = owner[p] >= 0 ? owner[p] : fill_proto;
      for (int d = 0; d < opt.dim; ++d) {
        img.features.features(p, d) = static_cast<float>(proto(d, col) + noise(rng));
      }
    }
    for (auto& o : img.objects) o.image_id = img.features.image_id;

    img.gt_labels.push_back(img.label);
    for (int c : rect_class) {
      if (std::find(img.gt_labels.begin(), img.gt_labels.end(), c) ==
          img.gt_labels.end()) {
        img.gt_labels.push_back(c);
      }
    }
    const bool has0 = std::find(img.gt_labels.begin(), img.gt_labels.end(), 0) !=
                      img.gt_labels.end();
    const bool has1 = std::find(img.gt_labels.begin(), img.gt_labels.end(), 1) !=
                      img.gt_labels.end();
    const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (has0 && !has1 && draw < opt.partner_prob) img.gt_labels.push_back(1);

    // Teacher logits: scaled class coverage per cell plus noise.
    RowMatrix<float> dense(cells * cells, opt.classes);
    std::normal_distribution<double> logit_noise(0.0, kLogitNoise);
    const double step = static_cast<double>(side) / cells;
    for (int r = 0; r < cells; ++r) {
      for (int c = 0; c < cells; ++c) {
        Eigen::VectorXd cov = Eigen::VectorXd::Zero(opt.classes);
        if (uniform) {
          cov(img.label) = 1.0;
        } else {
          for (std::size_t k = 0; k < rects.size(); ++k) {
            const Rect& rc = rects[k];
            const double oy = overlap(r * step, (r + 1) * step,
                                      rc.r0 * opt.patch_px,
                                      (rc.r0 + rc.h) * opt.patch_px);
            const double ox = overlap(c * step, (c + 1) * step,
                                      rc.c0 * opt.patch_px,
                                      (rc.c0 + rc.w) * opt.patch_px);
            cov(rect_class[k]) += oy * ox / (step * step);
          }
        }
        for (int k = 0; k < opt.classes; ++k) {
          dense(r * cells + c, k) =
              static_cast<float>(kLogitScale * cov(k) + logit_noise(rng));
        }
      }
    }
    img.logits = sparsify_logits(img.features.image_id, dense, cells, cells,
                                 std::min(5, opt.classes));
    out.push_back(std::move(img));
  }
  return out;
}

CommandReport cmd_synth(const SynthOptions& opt) {
  const auto images = synth_images(opt);
  const fs::path dir = opt.out_dir;
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "logits");
  if (opt.previews) fs::create_directories(dir / "previews");

  CommandReport report;
  Manifest manifest;
  std::vector<std::pair<std::string, std::vector<int>>> gt_labels;
  std::vector<GtObject> gt_masks;
  for (const auto& img : images) {
    const std::string& id = img.features.image_id;
    ManifestEntry e;
    e.image_id = id;
    e.features = dir / "features" / (id + ".rltf");
    e.logits = dir / "logits" / (id + ".rltf");
    e.label = img.label;
    e.height = img.height;
    e.width = img.width;
    save_feature_map(e.features, img.features);
    save_logit_map(*e.logits, img.logits);
    report.outputs.push_back(e.features);
    report.outputs.push_back(*e.logits);
    if (opt.previews) {
      e.preview = dir / "previews" / (id + ".pgm");
      write_file(*e.preview, preview_pgm(img));
      report.outputs.push_back(*e.preview);
    }
    manifest.entries.push_back(e);
    gt_labels.emplace_back(id, img.gt_labels);
    gt_masks.insert(gt_masks.end(), img.objects.begin(), img.objects.end());
  }
  write_manifest(dir / "manifest.tsv", manifest);
  write_gt_labels(dir / "gt_labels.tsv", gt_labels);
  write_gt_masks(dir / "gt_masks.tsv", gt_masks);

  std::ostringstream names;
  for (int c = 0; c < opt.classes; ++c) names << "class_" << c << '\n';
  write_file(dir / "class_names.txt", names.str());

  DiscoveryConfig loose;
  loose.preset_id = "synth_t035";
  loose.tau_ncut = 0.35;
  loose.max_proposals = 4;
  DiscoveryConfig strict = loose;
  strict.preset_id = "synth_t050";
  strict.tau_ncut = 0.5;
  strict.refine = Refine::Morphological;
  const std::vector<DiscoveryConfig> presets{loose, strict};
  save_presets(dir / "presets.ini", presets);

  // The planted ambiguous pair (0, 1) with its ground-truth statistics.
  CooccurrenceTable table;
  table.class_count = opt.classes;
  long n0 = 0, n1 = 0, n01 = 0;
  for (const auto& [id, labels] : gt_labels) {
    const bool a = std::find(labels.begin(), labels.end(), 0) != labels.end();
    const bool b = std::find(labels.begin(), labels.end(), 1) != labels.end();
    n0 += a;
    n1 += b;
    n01 += a && b;
  }
  if (n0 > 0 && n1 > 0 && n01 > 0) {
    table.rows.push_back(CooccurrenceRow{0, 1, n0, n1, n01,
                                         static_cast<double>(n01) / n1,
                                         static_cast<double>(n01) / n0});
  }
  std::vector<std::string> class_names;
  for (int c = 0; c < opt.classes; ++c) class_names.push_back("class_" + std::to_string(c));
  write_cooccurrence(dir / "cooccurrence.tsv", table, class_names);

  for (const char* f : {"manifest.tsv", "gt_labels.tsv", "gt_masks.tsv",
                        "class_names.txt", "presets.ini", "cooccurrence.tsv"}) {
    report.outputs.push_back(dir / f);
  }
  std::ostringstream s;
  s << "synthesized " << images.size() << " images, " << gt_masks.size()
    << " planted objects into " << dir.string() << '\n';
  report.summary = s.str();
  return report;
}

}  // namespace relabel
