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

#ifndef RELABEL_LANCZOS_HPP_
#define RELABEL_LANCZOS_HPP_

#include <cstdint>

#include <Eigen/Dense>

namespace relabel {

struct SymmetricEigenpair {
  double value = 0.0;
  Eigen::VectorXd vector;  // unit norm
  double residual = 0.0;   // ||A v - value v||
  int iterations = 0;
  bool converged = false;
};

// Smallest eigenpair of the symmetric matrix `a` on the orthogonal
// complement of `deflate` (a unit vector; pass an empty vector for none).
// Lanczos with full reorthogonalization from a seeded random start; stops
// once the Ritz residual is at most `tol` or the Krylov space is exhausted.
SymmetricEigenpair lanczos_smallest(const Eigen::MatrixXd& a,
                                    const Eigen::VectorXd& deflate, double tol,
                                    int max_iter, std::uint64_t seed);

}  // namespace relabel

#endif  // RELABEL_LANCZOS_HPP_
