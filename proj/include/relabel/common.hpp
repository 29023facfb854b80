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

#ifndef RELABEL_COMMON_HPP_
#define RELABEL_COMMON_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace relabel {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, manifests, arguments that
// violate a documented precondition).
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown, e.g. a non-finite training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Binary mask, rows x cols, values 0/1. Flat index i = row * cols + col.
using Mask =
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index mask_count(const Mask& m) { return (m != 0).count(); }

// Derives an independent stream seed from a base seed and up to two tags.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                       std::uint64_t b = 0);

// 64-bit FNV-1a digest; used for output checksums and config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t v);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write
// results into pre-sized slots so output order never depends on scheduling.
// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

// Index of the largest entry, lowest index on exact ties.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::DenseBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

// Numerically stable softmax of a logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar shift = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e =
      (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

}  // namespace relabel

#endif  // RELABEL_COMMON_HPP_
