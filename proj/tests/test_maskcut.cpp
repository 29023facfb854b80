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

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "relabel/lanczos.hpp"
#include "relabel/maskcut.hpp"

namespace relabel {
namespace {

using testing::block_fmap;
using testing::rect_mask;
using testing::TempDir;

// Pixel mask set where the oracle bilinear sample of the patch mask is >= 0.5.
Mask sampled_mask(const Mask& patch, int h, int w) {
  const int gh = static_cast<int>(patch.rows()), gw = static_cast<int>(patch.cols());
  std::vector<double> grid(gh * gw);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) grid[r * gw + c] = patch(r, c);
  }
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out(y, x) = oracle::bilinear_sample(grid, gh, gw, h, w, y, x) >= 0.5 ? 1 : 0;
    }
  }
  return out;
}

TEST(Affinity, ThresholdsCosinesAndClearsExcludedNodes) {
  PatchFeatureMap f;
  f.grid_h = 2;
  f.grid_w = 2;
  f.features.resize(4, 2);
  f.features << 1, 0, 1, 1, 0, 1, 0, 1;  // cos(0,1) = 0.707, cos(0,2) = cos(0,3) = 0
  const AffinityGraph g = build_affinity(f, 0.5);
  EXPECT_EQ(g.weights(0, 1), 1.0);
  EXPECT_EQ(g.weights(0, 2), 1e-5);
  EXPECT_EQ(g.weights(2, 3), 1.0);
  EXPECT_EQ(g.weights(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.degree(0), 2.0 + 2e-5);
  const std::vector<std::uint8_t> ex = {0, 1, 0, 0};
  const AffinityGraph h = build_affinity(f, 0.5, ex);
  EXPECT_EQ(h.weights.row(1).sum(), 0.0);
  EXPECT_EQ(h.weights.col(1).sum(), 0.0);
  EXPECT_EQ(h.active_nodes(), (std::vector<int>{0, 2, 3}));
}

TEST(Affinity, ZeroFeatureHasZeroCosine) {
  PatchFeatureMap f;
  f.grid_h = 2;
  f.grid_w = 2;
  f.features = RowMatrix<float>::Zero(4, 3);
  f.features(1, 0) = 1.0f;
  EXPECT_EQ(build_affinity(f, 0.0).weights(0, 1), 1.0);  // 0 >= 0
  EXPECT_EQ(build_affinity(f, 0.1).weights(0, 1), 1e-5);
}

TEST(Lanczos, MatchesDenseSmallestOnDeflatedSpace) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const int n = 5 + t;
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
    a = (a + a.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    const Eigen::VectorXd v0 = es.eigenvectors().col(0);
    const SymmetricEigenpair p = lanczos_smallest(a, v0, 1e-12, 500, t);
    EXPECT_TRUE(p.converged);
    EXPECT_NEAR(p.value, es.eigenvalues()(1), 1e-9);
    EXPECT_NEAR(std::abs(p.vector.dot(es.eigenvectors().col(1))), 1.0, 1e-8);
  }
}

TEST(Cut, DenseAndLanczosAgreeOnABlock) {
  const PatchFeatureMap f = block_fmap(6, 6, 1, 1, 4, 3);
  DiscoveryConfig cfg;
  const AffinityGraph g = build_affinity(f, 0.5);
  cfg.eigensolver = Eigensolver::Dense;
  const auto dense = second_eigvec(g, cfg);
  cfg.eigensolver = Eigensolver::Lanczos;
  const auto lz = second_eigvec(g, cfg);
  ASSERT_TRUE(dense && lz);
  EXPECT_NEAR(dense->lambda, lz->lambda, 1e-10);
  EXPECT_NEAR(std::abs(dense->x.dot(lz->x)), 1.0, 1e-10);
  EXPECT_LT(lz->residual, 1e-8);
  const auto ref = oracle::generalized_cut(g.weights);
  EXPECT_NEAR(ref->lambda, lz->lambda, 1e-10);
}

TEST(Cut, TooFewNodesGivesNothing) {
  const PatchFeatureMap f = block_fmap(2, 2, 0, 0, 1, 1);
  const std::vector<std::uint8_t> ex = {1, 1, 1, 0};
  EXPECT_FALSE(second_eigvec(build_affinity(f, 0.5, ex), DiscoveryConfig{}).has_value());
}

TEST(Foreground, FlipsToHoldThePeak) {
  // Mean-threshold side is {2, 3}; the peak |x| sits at node 0.
  Eigen::VectorXd x(4);
  x << -0.9, -0.1, 0.3, 0.35;
  const CutResult r = select_foreground(x, 1, 4, 4);
  EXPECT_TRUE(r.flipped);
  EXPECT_EQ(r.reason, FlipReason::MaxMagnitude);
  EXPECT_EQ(r.mask(0, 0), 1);
  EXPECT_EQ(r.mask(0, 1), 1);
  EXPECT_EQ(r.mask(0, 3), 0);
}

TEST(Foreground, CornerRuleRejectsBackground) {
  // 3x3 grid: the high side is the ring (four corners), the peak is in it.
  Eigen::VectorXd x = Eigen::VectorXd::Constant(9, 0.2);
  x(4) = -0.1;
  x(0) = 0.5;
  const CutResult r = select_foreground(x, 3, 3, 2);
  EXPECT_EQ(r.reason, FlipReason::CornerRule);
  EXPECT_EQ(mask_count(r.mask), 1);
  EXPECT_EQ(r.mask(1, 1), 1);
}

TEST(Foreground, NoFlipReportsNone) {
  Eigen::VectorXd x(4);
  x << 0.9, 0.1, -0.3, -0.35;
  const CutResult r = select_foreground(x, 2, 2, 4);
  EXPECT_FALSE(r.flipped);
  EXPECT_EQ(r.reason, FlipReason::None);
}

TEST(Foreground, InactiveNodesNeverJoin) {
  Eigen::VectorXd x(4);
  x << 0.9, 0.0, 0.8, -0.5;
  const std::vector<std::uint8_t> active = {1, 0, 1, 1};
  const CutResult r = select_foreground(x, 1, 4, 4, active);
  EXPECT_EQ(r.mask(0, 1), 0);
}

TEST(NcutValue, EmptySideIsInfinite) {
  const PatchFeatureMap f = block_fmap(3, 3, 0, 0, 1, 1);
  const AffinityGraph g = build_affinity(f, 0.5);
  EXPECT_TRUE(std::isinf(ncut_value(g, Mask::Zero(3, 3))));
  EXPECT_TRUE(std::isinf(ncut_value(g, Mask::Ones(3, 3))));
  const double v = ncut_value(g, rect_mask(3, 3, 0, 0, 1, 1));
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1e-3);
}

TEST(SeedComponent, KeepsOnlyTheSeedsComponent) {
  Mask m = Mask::Zero(3, 4);
  m(0, 0) = m(0, 1) = 1;
  m(1, 1) = 1;
  m(2, 3) = 1;
  const Mask s = seed_component(m, 1);
  EXPECT_EQ(mask_count(s), 3);
  EXPECT_EQ(s(2, 3), 0);
}

TEST(Discover, FindsTwoBlocksThenStops) {
  PatchFeatureMap f;
  f.image_id = "two";
  f.grid_h = 8;
  f.grid_w = 8;
  f.features = RowMatrix<float>::Zero(64, 3);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      int k = 2;
      if (r >= 1 && r < 4 && c >= 1 && c < 4) k = 0;
      if (r >= 4 && r < 7 && c >= 4 && c < 7) k = 1;
      f.features(r * 8 + c, k) = 1.0f;
    }
  }
  DiscoveryConfig cfg;
  cfg.preset_id = "t";
  const auto props = discover(f, cfg);
  ASSERT_EQ(props.size(), 2u);
  EXPECT_EQ(props[0].iteration_index, 1);
  EXPECT_EQ(props[1].iteration_index, 2);
  EXPECT_EQ(props[0].config_id, "t");
  const Mask a = rect_mask(8, 8, 1, 1, 4, 4), b = rect_mask(8, 8, 4, 4, 7, 7);
  const bool ab = (props[0].patch_mask == a).all() && (props[1].patch_mask == b).all();
  const bool ba = (props[0].patch_mask == b).all() && (props[1].patch_mask == a).all();
  EXPECT_TRUE(ab || ba);
}

TEST(Discover, RespectsMaxProposals) {
  PatchFeatureMap f = testing::random_fmap(8, 8, 4, 5);
  DiscoveryConfig cfg;
  cfg.max_ncut = std::numeric_limits<double>::max();
  cfg.min_patches = 1;
  cfg.max_proposals = 2;
  EXPECT_LE(discover(f, cfg).size(), 2u);
}

TEST(Refine, UpsampledRectangleIsExact) {
  const Mask patch = rect_mask(4, 4, 1, 1, 3, 3);
  const Mask px = refine_mask(patch, 16, 16, Refine::None);
  EXPECT_TRUE((px == sampled_mask(patch, 16, 16)).all());
  EXPECT_EQ(px(4, 4), 0);  // corner sample is 0.625^2
  EXPECT_EQ(px(4, 5), 1);
  const Mask morph = refine_mask(patch, 16, 16, Refine::Morphological, 4);
  EXPECT_TRUE((morph == px).all());
}

TEST(Refine, MorphologyDropsSpecks) {
  Mask patch = Mask::Zero(8, 8);
  patch(0, 7) = 1;  // one-patch speck, 1x1 px after upsampling at scale 1
  patch.block(2, 2, 4, 4).setOnes();
  const Mask px = refine_mask(patch, 8, 8, Refine::Morphological, 4);
  EXPECT_EQ(px(0, 7), 0);
  EXPECT_EQ(mask_count(px), 16);
}

TEST(Discover, PixelMasksMatchImageSize) {
  const PatchFeatureMap f = block_fmap(6, 6, 1, 1, 4, 4);
  DiscoveryConfig cfg;
  const auto props = discover_with_pixels(f, cfg, 24, 24);
  ASSERT_FALSE(props.empty());
  ASSERT_TRUE(props[0].pixel_mask.has_value());
  EXPECT_EQ(props[0].pixel_mask->rows(), 24);
  EXPECT_TRUE((*props[0].pixel_mask ==
               sampled_mask(rect_mask(6, 6, 1, 1, 4, 4), 24, 24)).all());
}

TEST(Presets, ReferenceValues) {
  const auto p = reference_presets();
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0].preset_id, "dinov3_b16_v768");
  EXPECT_EQ(p[0].tau_ncut, 0.35);
  EXPECT_EQ(p[0].max_proposals, 4);
  EXPECT_EQ(p[0].refine, Refine::None);
  for (int i = 1; i < 4; ++i) {
    EXPECT_EQ(p[i].max_proposals, 3);
    EXPECT_EQ(p[i].refine, Refine::Morphological);
  }
  EXPECT_EQ(p[1].tau_ncut, 0.12);
  EXPECT_EQ(p[2].tau_ncut, 0.12);
  EXPECT_EQ(p[3].tau_ncut, 0.15);
}

TEST(Presets, IniRoundTrip) {
  TempDir dir;
  auto p = reference_presets();
  p[1].min_patches = 5;
  p[2].eigensolver = Eigensolver::Dense;
  save_presets(dir / "p.ini", p);
  const auto back = load_presets(dir / "p.ini");
  ASSERT_EQ(back.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(back[i].preset_id, p[i].preset_id);
    EXPECT_EQ(back[i].tau_ncut, p[i].tau_ncut);
    EXPECT_EQ(back[i].max_proposals, p[i].max_proposals);
    EXPECT_EQ(back[i].refine, p[i].refine);
    EXPECT_EQ(back[i].min_patches, p[i].min_patches);
    EXPECT_EQ(back[i].eigensolver, p[i].eigensolver);
  }
}

TEST(Presets, UnknownKeyOrBadValueIsDataError) {
  TempDir dir;
  write_file(dir / "a.ini", "[x]\ntau_ncut = 0.3\nbogus = 1\n");
  EXPECT_THROW(load_presets(dir / "a.ini"), DataError);
  write_file(dir / "b.ini", "[x]\ntau_ncut = 2\n");
  EXPECT_THROW(load_presets(dir / "b.ini"), DataError);
}

TEST(Sweep, RecallAndOrdering) {
  SweepImage im;
  im.features = block_fmap(6, 6, 1, 1, 4, 4);
  im.image_h = 24;
  im.image_w = 24;
  im.gt_masks = {rect_mask(24, 24, 4, 4, 16, 16)};
  DiscoveryConfig good;
  good.preset_id = "b_good";
  DiscoveryConfig none = good;
  none.preset_id = "a_none";
  none.min_patches = 100;  // never accepts a cut
  const std::vector<DiscoveryConfig> cfgs = {none, good};
  const auto rows = sweep(cfgs, std::vector<SweepImage>{im}, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].preset_id, "b_good");
  EXPECT_EQ(rows[0].recall, 1.0);
  EXPECT_EQ(rows[1].recall, 0.0);
  EXPECT_NE(format_recall_table(rows).find("b_good"), std::string::npos);
}

TEST(MaskIou, Basic) {
  EXPECT_DOUBLE_EQ(mask_iou(rect_mask(4, 4, 0, 0, 2, 2), rect_mask(4, 4, 0, 0, 2, 4)), 0.5);
  EXPECT_EQ(mask_iou(Mask::Zero(2, 2), Mask::Zero(2, 2)), 0.0);
}

}  // namespace
}  // namespace relabel
