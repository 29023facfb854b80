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

// On-disk formats and in-memory containers for feature maps, logit maps,
// masks and label sets, plus resampling between patch and pixel grids.
//
// TensorFile layout (little-endian):
//   "RLTF" | version u32 | dtype u8 | ndim u8 | shape u64 x ndim | payload
// A bundle is several TensorFile records written back to back.

#ifndef RELABEL_TENSOR_STORE_HPP_
#define RELABEL_TENSOR_STORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relabel/common.hpp"

namespace relabel {

// ---------------------------------------------------------------------------
// TensorFile

inline constexpr std::uint32_t kTensorFileVersion = 1;

enum class DType : std::uint8_t { F32 = 0, I32 = 1, U8 = 2 };

std::size_t dtype_size(DType t);

struct Tensor {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> payload;

  std::uint64_t element_count() const;

  static Tensor from_f32(std::vector<std::uint64_t> shape,
                         std::span<const float> values);
  static Tensor from_i32(std::vector<std::uint64_t> shape,
                         std::span<const std::int32_t> values);
  static Tensor from_text(std::string_view text);

  std::vector<float> to_f32() const;
  std::vector<std::int32_t> to_i32() const;
  std::string to_text() const;

  bool operator==(const Tensor&) const = default;
};

void write_tensor(std::ostream& out, const Tensor& t);
// Returns std::nullopt on clean end-of-stream; throws DataError on a
// truncated or malformed record.
std::optional<Tensor> read_tensor(std::istream& in);

void write_bundle(const std::filesystem::path& path,
                  std::span<const Tensor> tensors);
std::vector<Tensor> read_bundle(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Feature and logit maps

struct PatchFeatureMap {
  std::string image_id;
  int grid_h = 0;
  int grid_w = 0;
  // (grid_h * grid_w) x dim; row r * grid_w + c holds patch (r, c).
  RowMatrix<float> features;
  std::string source_tag;

  int dim() const { return static_cast<int>(features.cols()); }
  int patch_count() const { return grid_h * grid_w; }
  // Throws DataError unless the shape matches and every entry is finite.
  void validate() const;
};

void save_feature_map(const std::filesystem::path& path,
                      const PatchFeatureMap& fmap);
PatchFeatureMap load_feature_map(const std::filesystem::path& path);

// Sparse per-cell top-k class logits.
struct LogitMap {
  std::string image_id;
  int cell_h = 15;
  int cell_w = 15;
  int k = 5;
  int class_count = 0;
  std::vector<std::int32_t> indices;  // cell_h * cell_w * k
  std::vector<float> logits;          // cell_h * cell_w * k

  int cell_count() const { return cell_h * cell_w; }
  // Throws DataError on out-of-range or duplicate class ids in a cell.
  void validate() const;
};

void save_logit_map(const std::filesystem::path& path, const LogitMap& lm);
LogitMap load_logit_map(const std::filesystem::path& path);

// (cell_h * cell_w) x class_count dense map, zero where a class is absent.
RowMatrix<float> densify_logits(const LogitMap& lm);

// Keeps the k largest logits per cell, descending, lowest class id on ties.
LogitMap sparsify_logits(std::string image_id, const RowMatrix<float>& dense,
                         int cell_h, int cell_w, int k);

// ---------------------------------------------------------------------------
// Resampling

// Source taps for output index `i` under half-pixel-center sampling:
// src = (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
struct BilinearTap {
  int lo;
  int hi;
  double t;
};

inline BilinearTap bilinear_tap(int i, int in, int out) {
  double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) -
               0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - lo};
}

// Resizes an (in_h * in_w) x C map (row-major spatial, one channel per
// column) to (out_h * out_w) x C.
template <typename Derived>
RowMatrix<typename Derived::Scalar> bilinear_resize(
    const Eigen::MatrixBase<Derived>& map, int in_h, int in_w, int out_h,
    int out_w) {
  using Scalar = typename Derived::Scalar;
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) {
    throw DataError("bilinear_resize: dimensions must be positive");
  }
  if (map.rows() != static_cast<Eigen::Index>(in_h) * in_w) {
    throw DataError("bilinear_resize: row count does not match in_h * in_w");
  }
  if (!map.allFinite()) {
    throw DataError("bilinear_resize: non-finite input");
  }
  const Eigen::Index channels = map.cols();
  RowMatrix<Scalar> out(static_cast<Eigen::Index>(out_h) * out_w, channels);
  std::vector<BilinearTap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = bilinear_tap(x, in_w, out_w);
  for (int y = 0; y < out_h; ++y) {
    const BilinearTap ty = bilinear_tap(y, in_h, out_h);
    for (int x = 0; x < out_w; ++x) {
      const BilinearTap& tx = xs[x];
      const Eigen::Index a = static_cast<Eigen::Index>(ty.lo) * in_w + tx.lo;
      const Eigen::Index b = static_cast<Eigen::Index>(ty.lo) * in_w + tx.hi;
      const Eigen::Index c = static_cast<Eigen::Index>(ty.hi) * in_w + tx.lo;
      const Eigen::Index d = static_cast<Eigen::Index>(ty.hi) * in_w + tx.hi;
      const Eigen::Index o = static_cast<Eigen::Index>(y) * out_w + x;
      for (Eigen::Index ch = 0; ch < channels; ++ch) {
        const Scalar top = std::lerp(map(a, ch), map(b, ch),
                                     static_cast<Scalar>(tx.t));
        const Scalar bottom = std::lerp(map(c, ch), map(d, ch),
                                        static_cast<Scalar>(tx.t));
        out(o, ch) = std::lerp(top, bottom, static_cast<Scalar>(ty.t));
      }
    }
  }
  return out;
}

// Patch cell is set iff at least half of its pixel footprint is foreground.
Mask project_mask(const Mask& pixel_mask, int grid_h, int grid_w);

// ---------------------------------------------------------------------------
// Run-length encoding

// Row-major alternating run lengths starting with a (possibly empty) run of
// zeros. Only the first run may be zero-length.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> runs;

  bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const Mask& mask);
Mask rle_decode(const RleMask& rle);
// Text form "HxW:r0,r1,...".
std::string to_string(const RleMask& rle);
RleMask parse_rle(std::string_view text);

// ---------------------------------------------------------------------------
// Proposals

struct MaskProposal {
  std::string image_id;
  Mask patch_mask;
  std::optional<Mask> pixel_mask;
  int iteration_index = 1;
  std::string config_id;
};

// One TSV line per proposal:
//   image_id  config_id  iteration  patch_rle  pixel_rle|-
void write_proposals(const std::filesystem::path& path,
                     std::span<const MaskProposal> proposals);
std::vector<MaskProposal> read_proposals(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Label sets and the annotation sidecar

enum class Strategy { LocalHard, LocalSoft, PlusOriginal, PlusPred };

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

// Identifies a proposal within one image.
struct MaskRef {
  std::string config_id;
  int iteration_index = 0;

  bool operator==(const MaskRef&) const = default;
};

struct Grounding {
  int class_id = 0;
  double confidence = 0.0;
  // Absent for labels justified by the whole image (global signal).
  std::optional<MaskRef> mask;
  std::optional<RleMask> rle;

  bool operator==(const Grounding&) const = default;
};

struct ImageLabelSet {
  std::string image_id;
  Eigen::VectorXd soft;
  std::optional<std::vector<std::uint8_t>> hard;
  std::vector<Grounding> groundings;  // sorted by class_id
  Strategy strategy = Strategy::LocalSoft;

  int class_count() const { return static_cast<int>(soft.size()); }
  const Grounding* grounding_for(int class_id) const;
  Grounding* grounding_for(int class_id);
  void sort_groundings();
};

bool operator==(const ImageLabelSet& a, const ImageLabelSet& b);

// JSON-lines sidecar, one record per image.
std::string to_json_line(const ImageLabelSet& labels);
ImageLabelSet parse_json_line(std::string_view line);
void write_sidecar(const std::filesystem::path& path,
                   std::span<const ImageLabelSet> records);
std::vector<ImageLabelSet> read_sidecar(const std::filesystem::path& path);

// Reads a whole file; throws DataError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace relabel

#endif  // RELABEL_TENSOR_STORE_HPP_
