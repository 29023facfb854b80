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

#include "relabel/maskcut.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "relabel/lanczos.hpp"

namespace relabel {

namespace {

constexpr double kWeakAffinity = 1e-5;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      out = std::stoull(v, &used);
    } else {
      out = std::stoi(v, &used);
    }
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw DataError("preset key '" + key + "': bad value '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string s = lower(v);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw DataError("preset key '" + key + "': bad boolean '" + v + "'");
}

std::array<int, 4> corner_nodes(int grid_h, int grid_w) {
  return {0, grid_w - 1, (grid_h - 1) * grid_w, grid_h * grid_w - 1};
}

// 3x3 erosion/dilation; out-of-bounds neighbours are ignored so masks that
// touch the border are not eroded by it.
Mask morph(const Mask& m, bool dilate) {
  const auto h = m.rows();
  const auto w = m.cols();
  Mask out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      bool v = !dilate;
      for (Eigen::Index dy = -1; dy <= 1; ++dy) {
        for (Eigen::Index dx = -1; dx <= 1; ++dx) {
          const Eigen::Index yy = y + dy;
          const Eigen::Index xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (dilate) {
            v = v || m(yy, xx) != 0;
          } else {
            v = v && m(yy, xx) != 0;
          }
        }
      }
      out(y, x) = v ? 1 : 0;
    }
  }
  return out;
}

// Labels connected components; returns per-pixel component id (-1 for
// background) and the component sizes.
std::vector<int> label_components(const Mask& m, bool eight,
                                  std::vector<int>& sizes) {
  const int h = static_cast<int>(m.rows());
  const int w = static_cast<int>(m.cols());
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  sizes.clear();
  std::deque<int> queue;
  for (int start = 0; start < h * w; ++start) {
    if (m.data()[start] == 0 || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    label[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++sizes[id];
      const int py = p / w;
      const int px = p % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (!eight && dy != 0 && dx != 0) continue;
          const int yy = py + dy;
          const int xx = px + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (m.data()[q] != 0 && label[q] < 0) {
            label[q] = id;
            queue.push_back(q);
          }
        }
      }
    }
  }
  return label;
}

}  // namespace

std::string to_string(Refine r) {
  return r == Refine::None ? "none" : "morphological";
}

Refine parse_refine(std::string_view s) {
  const std::string v = lower(s);
  if (v == "none" || v == "off") return Refine::None;
  if (v == "morphological" || v == "morph" || v == "on") {
    return Refine::Morphological;
  }
  throw DataError("unknown refine mode '" + std::string(s) + "'");
}

std::string to_string(Eigensolver e) {
  return e == Eigensolver::Dense ? "dense" : "lanczos";
}

Eigensolver parse_eigensolver(std::string_view s) {
  const std::string v = lower(s);
  if (v == "dense") return Eigensolver::Dense;
  if (v == "lanczos") return Eigensolver::Lanczos;
  throw DataError("unknown eigensolver '" + std::string(s) + "'");
}

void DiscoveryConfig::validate() const {
  if (!(tau_ncut > 0.0 && tau_ncut < 1.0)) {
    throw DataError("preset " + preset_id + ": tau_ncut must lie in (0,1)");
  }
  if (max_proposals < 1) {
    throw DataError("preset " + preset_id + ": max_proposals must be >= 1");
  }
  if (min_patches < 1) {
    throw DataError("preset " + preset_id + ": min_patches must be >= 1");
  }
  if (!(lanczos_tol > 0.0) || lanczos_max_iter < 1) {
    throw DataError("preset " + preset_id + ": bad eigensolver settings");
  }
  if (corner_limit < 0 || corner_limit > 4 || min_component_px < 0) {
    throw DataError("preset " + preset_id + ": bad refinement settings");
  }
}

std::vector<DiscoveryConfig> reference_presets() {
  auto make = [](std::string id, double tau, int n, Refine refine) {
    DiscoveryConfig c;
    c.preset_id = std::move(id);
    c.tau_ncut = tau;
    c.max_proposals = n;
    c.refine = refine;
    return c;
  };
  return {make("dinov3_b16_v768", 0.35, 4, Refine::None),
          make("dinov2_g14_v672", 0.12, 3, Refine::Morphological),
          make("dinov2_l14_v448", 0.12, 3, Refine::Morphological),
          make("dinov1_b8_k480", 0.15, 3, Refine::Morphological)};
}

std::vector<DiscoveryConfig> load_presets(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<DiscoveryConfig> presets;
  auto find_or_add = [&](const std::string& id) -> DiscoveryConfig& {
    for (auto& p : presets) {
      if (p.preset_id == id) return p;
    }
    presets.emplace_back();
    presets.back().preset_id = id;
    return presets.back();
  };
  for (const auto& item : items) {
    if (item.parents.empty()) {
      if (item.name == "++" || item.name == "--") continue;
      throw DataError(path.string() + ": key '" + item.name +
                      "' outside a [preset] section");
    }
    if (item.name == "++" || item.name == "--") {
      find_or_add(item.parents.front());
      continue;
    }
    DiscoveryConfig& p = find_or_add(item.parents.front());
    const std::string& key = item.name;
    const std::string value = item.inputs.empty() ? "" : item.inputs.front();
    if (key == "tau_ncut") {
      p.tau_ncut = parse_value<double>(key, value);
    } else if (key == "max_proposals" || key == "N") {
      p.max_proposals = parse_value<int>(key, value);
    } else if (key == "min_patches") {
      p.min_patches = parse_value<int>(key, value);
    } else if (key == "max_ncut") {
      p.max_ncut = parse_value<double>(key, value);
    } else if (key == "seed_component") {
      p.seed_component = parse_bool(key, value);
    } else if (key == "refine") {
      p.refine = parse_refine(value);
    } else if (key == "min_component_px") {
      p.min_component_px = parse_value<int>(key, value);
    } else if (key == "eigensolver") {
      p.eigensolver = parse_eigensolver(value);
    } else if (key == "lanczos_tol") {
      p.lanczos_tol = parse_value<double>(key, value);
    } else if (key == "lanczos_max_iter") {
      p.lanczos_max_iter = parse_value<int>(key, value);
    } else if (key == "corner_limit") {
      p.corner_limit = parse_value<int>(key, value);
    } else if (key == "seed") {
      p.seed = parse_value<std::uint64_t>(key, value);
    } else {
      throw DataError(path.string() + ": unknown preset key '" + key + "'");
    }
  }
  if (presets.empty()) throw DataError(path.string() + ": no presets defined");
  for (const auto& p : presets) p.validate();
  return presets;
}

void save_presets(const std::filesystem::path& path,
                  std::span<const DiscoveryConfig> presets) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : presets) {
    out << '[' << p.preset_id << "]\n"
        << "tau_ncut = " << p.tau_ncut << '\n'
        << "max_proposals = " << p.max_proposals << '\n'
        << "min_patches = " << p.min_patches << '\n'
        << "max_ncut = " << p.max_ncut << '\n'
        << "seed_component = " << (p.seed_component ? "true" : "false") << '\n'
        << "refine = " << to_string(p.refine) << '\n'
        << "min_component_px = " << p.min_component_px << '\n'
        << "eigensolver = " << to_string(p.eigensolver) << '\n'
        << "lanczos_tol = " << p.lanczos_tol << '\n'
        << "lanczos_max_iter = " << p.lanczos_max_iter << '\n'
        << "corner_limit = " << p.corner_limit << '\n'
        << "seed = " << p.seed << "\n\n";
  }
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------

std::vector<int> AffinityGraph::active_nodes() const {
  std::vector<int> out;
  for (int i = 0; i < node_count(); ++i) {
    if (excluded.empty() || excluded[i] == 0) out.push_back(i);
  }
  return out;
}

AffinityGraph build_affinity(const PatchFeatureMap& fmap, double tau_ncut,
                             std::span<const std::uint8_t> excluded) {
  fmap.validate();
  const Eigen::Index n = fmap.patch_count();
  if (!excluded.empty() && static_cast<Eigen::Index>(excluded.size()) != n) {
    throw DataError("build_affinity: excluded set has the wrong length");
  }
  Eigen::MatrixXd unit = fmap.features.cast<double>();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) {
      unit.row(i) /= norm;
    } else {
      unit.row(i).setZero();
    }
  }
  const Eigen::MatrixXd cosine = unit * unit.transpose();

  AffinityGraph g;
  g.grid_h = fmap.grid_h;
  g.grid_w = fmap.grid_w;
  g.excluded.assign(excluded.begin(), excluded.end());
  if (g.excluded.empty()) g.excluded.assign(n, 0);
  g.weights = (cosine.array() >= tau_ncut)
                  .select(Eigen::MatrixXd::Ones(n, n),
                          Eigen::MatrixXd::Constant(n, n, kWeakAffinity));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g.excluded[i]) {
      g.weights.row(i).setZero();
      g.weights.col(i).setZero();
    }
  }
  g.degree = g.weights.rowwise().sum();
  return g;
}

std::optional<CutResult> second_eigvec(const AffinityGraph& graph,
                                       const DiscoveryConfig& cfg) {
  std::vector<int> active;
  for (int i : graph.active_nodes()) {
    if (graph.degree(i) > 0.0) active.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(active.size());
  if (m < 2) return std::nullopt;

  const Eigen::MatrixXd w = graph.weights(active, active);
  const Eigen::VectorXd d = graph.degree(active);
  const Eigen::VectorXd inv_sqrt = d.array().rsqrt().matrix();
  // Symmetric normalization of (D - W): I - D^-1/2 W D^-1/2.
  Eigen::MatrixXd lsym = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  lsym.diagonal().array() += 1.0;
  lsym = 0.5 * (lsym + lsym.transpose()).eval();

  double lambda = 0.0;
  Eigen::VectorXd u;
  bool converged = true;
  if (cfg.eigensolver == Eigensolver::Dense) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lsym);
    if (es.info() != Eigen::Success) {
      throw NumericError("dense eigensolver failed to converge");
    }
    lambda = es.eigenvalues()(1);
    u = es.eigenvectors().col(1);
  } else {
    // sqrt(d) spans the null space of the normalized Laplacian.
    const Eigen::VectorXd null_vec = d.array().sqrt().matrix().normalized();
    // Scale so the generalized residual bound holds after x = D^-1/2 u.
    const double tol =
        cfg.lanczos_tol * std::sqrt(d.minCoeff() / d.maxCoeff());
    const SymmetricEigenpair pair = lanczos_smallest(
        lsym, null_vec, tol, cfg.lanczos_max_iter, cfg.seed);
    lambda = pair.value;
    u = pair.vector;
    converged = pair.converged;
  }

  Eigen::VectorXd xa = inv_sqrt.cwiseProduct(u);
  xa.normalize();
  const Eigen::Index peak = argmax_lowest(xa.cwiseAbs());
  if (xa(peak) < 0.0) xa = -xa;

  CutResult out;
  out.lambda = lambda;
  out.converged = converged;
  out.x = Eigen::VectorXd::Zero(graph.node_count());
  out.x(active) = xa;
  const Eigen::VectorXd dx = d.cwiseProduct(xa);
  out.residual = (d.cwiseProduct(xa) - w * xa - lambda * dx).norm() / dx.norm();
  return out;
}

CutResult select_foreground(const Eigen::VectorXd& x, int grid_h, int grid_w,
                            int corner_limit,
                            std::span<const std::uint8_t> active) {
  const Eigen::Index n = static_cast<Eigen::Index>(grid_h) * grid_w;
  if (x.size() != n) throw DataError("select_foreground: size mismatch");
  if (!active.empty() && static_cast<Eigen::Index>(active.size()) != n) {
    throw DataError("select_foreground: active set has the wrong length");
  }
  auto is_active = [&](Eigen::Index i) { return active.empty() || active[i] != 0; };

  CutResult out;
  out.x = x;
  out.mask = Mask::Zero(grid_h, grid_w);
  double sum = 0.0;
  Eigen::Index count = 0;
  Eigen::Index peak = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_active(i)) continue;
    sum += x(i);
    ++count;
    if (peak < 0 || std::abs(x(i)) > std::abs(x(peak))) peak = i;
  }
  if (count == 0) return out;
  const double mean = sum / static_cast<double>(count);

  Mask initial = Mask::Zero(grid_h, grid_w);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (is_active(i) && x(i) >= mean) initial.data()[i] = 1;
  }
  auto complement = [&](const Mask& m) {
    Mask c = Mask::Zero(grid_h, grid_w);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (is_active(i) && m.data()[i] == 0) c.data()[i] = 1;
    }
    return c;
  };
  auto corners_in = [&](const Mask& m) {
    int k = 0;
    for (int c : corner_nodes(grid_h, grid_w)) k += m.data()[c] != 0;
    return k;
  };

  Mask side = initial;
  FlipReason reason = FlipReason::None;
  if (initial.data()[peak] == 0) {
    side = complement(initial);
    reason = FlipReason::MaxMagnitude;
  }
  if (corners_in(side) > corner_limit) {
    Mask other = complement(side);
    if (corners_in(other) <= corner_limit) {
      side = std::move(other);
      reason = FlipReason::CornerRule;
    }
  }
  out.flipped = (side != initial).any();
  out.reason = out.flipped ? reason : FlipReason::None;
  out.mask = std::move(side);
  return out;
}

double ncut_value(const AffinityGraph& graph, const Mask& mask) {
  const int n = graph.node_count();
  if (mask.size() != n) throw DataError("ncut_value: size mismatch");
  double cut = 0.0;
  double assoc_a = 0.0;
  double assoc_b = 0.0;
  for (int i = 0; i < n; ++i) {
    if (graph.excluded[i]) continue;
    if (mask.data()[i]) {
      assoc_a += graph.degree(i);
      for (int j = 0; j < n; ++j) {
        if (!graph.excluded[j] && !mask.data()[j]) cut += graph.weights(i, j);
      }
    } else {
      assoc_b += graph.degree(i);
    }
  }
  if (assoc_a <= 0.0 || assoc_b <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return cut / assoc_a + cut / assoc_b;
}

Mask seed_component(const Mask& mask, int seed) {
  Mask out = Mask::Zero(mask.rows(), mask.cols());
  if (seed < 0 || seed >= mask.size() || mask.data()[seed] == 0) return out;
  std::vector<int> sizes;
  const auto label = label_components(mask, /*eight=*/false, sizes);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (label[i] == label[seed]) out.data()[i] = 1;
  }
  return out;
}

std::vector<MaskProposal> discover(const PatchFeatureMap& fmap,
                                   const DiscoveryConfig& cfg) {
  cfg.validate();
  fmap.validate();
  const int n = fmap.patch_count();
  std::vector<std::uint8_t> excluded(n, 0);
  std::vector<MaskProposal> out;
  for (int t = 1; t <= cfg.max_proposals; ++t) {
    const AffinityGraph graph = build_affinity(fmap, cfg.tau_ncut, excluded);
    const auto cut = second_eigvec(graph, cfg);
    if (!cut) break;
    std::vector<std::uint8_t> active(n);
    for (int i = 0; i < n; ++i) active[i] = excluded[i] ? 0 : 1;
    CutResult fg = select_foreground(cut->x, fmap.grid_h, fmap.grid_w,
                                     cfg.corner_limit, active);
    Mask mask = std::move(fg.mask);
    if (cfg.seed_component && mask_count(mask) > 0) {
      int seed = -1;
      for (int i = 0; i < n; ++i) {
        if (mask.data()[i] &&
            (seed < 0 || std::abs(cut->x(i)) > std::abs(cut->x(seed)))) {
          seed = i;
        }
      }
      mask = seed_component(mask, seed);
    }
    if (mask_count(mask) < cfg.min_patches) break;
    if (!(ncut_value(graph, mask) <= cfg.max_ncut)) break;

    for (int i = 0; i < n; ++i) {
      if (mask.data()[i]) excluded[i] = 1;
    }
    MaskProposal p;
    p.image_id = fmap.image_id;
    p.patch_mask = std::move(mask);
    p.iteration_index = t;
    p.config_id = cfg.preset_id;
    out.push_back(std::move(p));
  }
  return out;
}

Mask refine_mask(const Mask& patch_mask, int target_h, int target_w,
                 Refine mode, int min_component_px) {
  const auto gh = static_cast<int>(patch_mask.rows());
  const auto gw = static_cast<int>(patch_mask.cols());
  const RowMatrix<float> src =
      Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>>(
          patch_mask.data(), patch_mask.size())
          .cast<float>()
          .matrix();
  const RowMatrix<float> up = bilinear_resize(src, gh, gw, target_h, target_w);
  Mask out(target_h, target_w);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.data()[i] = up(i, 0) >= 0.5f ? 1 : 0;
  }
  if (mode == Refine::Morphological) {
    out = morph(morph(out, false), true);  // opening
    out = morph(morph(out, true), false);  // closing
    std::vector<int> sizes;
    const auto label = label_components(out, /*eight=*/true, sizes);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (label[i] >= 0 && sizes[label[i]] < min_component_px) out.data()[i] = 0;
    }
  }
  return out;
}

std::vector<MaskProposal> discover_with_pixels(const PatchFeatureMap& fmap,
                                               const DiscoveryConfig& cfg,
                                               int image_h, int image_w) {
  auto proposals = discover(fmap, cfg);
  for (auto& p : proposals) {
    p.pixel_mask = refine_mask(p.patch_mask, image_h, image_w, cfg.refine,
                               cfg.min_component_px);
  }
  return proposals;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError("mask_iou: shape mismatch");
  }
  const Eigen::Index inter = ((a != 0) && (b != 0)).count();
  const Eigen::Index uni = ((a != 0) || (b != 0)).count();
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<RecallRow> sweep(std::span<const DiscoveryConfig> configs,
                             std::span<const SweepImage> images, int workers) {
  if (images.empty()) throw DataError("sweep: empty evaluation set");
  std::vector<RecallRow> rows;
  for (const auto& cfg : configs) {
    std::vector<int> matched(images.size(), 0);
    parallel_for(images.size(), workers, [&](std::size_t i) {
      const SweepImage& img = images[i];
      const auto props =
          discover_with_pixels(img.features, cfg, img.image_h, img.image_w);
      for (const Mask& gt : img.gt_masks) {
        for (const auto& p : props) {
          if (mask_iou(*p.pixel_mask, gt) >= 0.5) {
            ++matched[i];
            break;
          }
        }
      }
    });
    RecallRow row;
    row.preset_id = cfg.preset_id;
    for (std::size_t i = 0; i < images.size(); ++i) {
      row.matched += matched[i];
      row.total += static_cast<int>(images[i].gt_masks.size());
    }
    row.recall = row.total == 0 ? 0.0
                                : static_cast<double>(row.matched) / row.total;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RecallRow& a, const RecallRow& b) {
                     if (a.recall != b.recall) return a.recall > b.recall;
                     return a.preset_id < b.preset_id;
                   });
  return rows;
}

std::string format_recall_table(std::span<const RecallRow> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.preset_id.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s  %9s  %9s  %8s\n",
                static_cast<int>(width), "preset", "matched", "objects",
                "recall");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %9d  %9d  %8.4f\n",
                  static_cast<int>(width), r.preset_id.c_str(), r.matched,
                  r.total, r.recall);
    out << buf;
  }
  return out.str();
}

}  // namespace relabel
