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

#ifndef RELABEL_TESTS_FIXTURES_HPP_
#define RELABEL_TESTS_FIXTURES_HPP_

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "relabel/common.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("relabel_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline PatchFeatureMap random_fmap(int h, int w, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  PatchFeatureMap f;
  f.image_id = "img";
  f.grid_h = h;
  f.grid_w = w;
  f.features.resize(h * w, dim);
  for (Eigen::Index i = 0; i < f.features.size(); ++i) f.features.data()[i] = g(rng);
  return f;
}

// Two-valued map: `fg` patches inside the rectangle, `bg` elsewhere.
inline PatchFeatureMap block_fmap(int h, int w, int r0, int c0, int r1, int c1) {
  PatchFeatureMap f;
  f.image_id = "block";
  f.grid_h = h;
  f.grid_w = w;
  f.features = RowMatrix<float>::Zero(h * w, 2);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const bool in = r >= r0 && r < r1 && c >= c0 && c < c1;
      f.features(r * w + c, in ? 0 : 1) = 1.0f;
    }
  }
  return f;
}

inline Mask rect_mask(int h, int w, int r0, int c0, int r1, int c1) {
  Mask m = Mask::Zero(h, w);
  m.block(r0, c0, r1 - r0, c1 - c0).setOnes();
  return m;
}

}  // namespace relabel::testing

#endif  // RELABEL_TESTS_FIXTURES_HPP_
