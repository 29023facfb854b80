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

#include "relabel/lanczos.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "relabel/common.hpp"

namespace relabel {

SymmetricEigenpair lanczos_smallest(const Eigen::MatrixXd& a,
                                    const Eigen::VectorXd& deflate, double tol,
                                    int max_iter, std::uint64_t seed) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw DataError("lanczos: matrix must be square");
  const bool deflating = deflate.size() > 0;
  if (deflating && deflate.size() != n) {
    throw DataError("lanczos: deflation vector has the wrong length");
  }
  const Eigen::Index space = n - (deflating ? 1 : 0);
  if (space < 1) throw DataError("lanczos: empty search space");
  const Eigen::Index cap =
      std::min<Eigen::Index>(space, std::max(1, max_iter));

  Eigen::MatrixXd basis(n, cap);
  std::vector<double> alpha;
  std::vector<double> beta;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Two passes of classical Gram-Schmidt against the deflation vector and
  // the first `cols` basis vectors.
  auto orthogonalize = [&](Eigen::VectorXd& v, Eigen::Index cols) {
    for (int pass = 0; pass < 2; ++pass) {
      if (deflating) v -= deflate * deflate.dot(v);
      if (cols > 0) {
        const auto q = basis.leftCols(cols);
        v -= q * (q.transpose() * v);
      }
    }
  };
  auto random_unit = [&](Eigen::Index cols) -> std::optional<Eigen::VectorXd> {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
      orthogonalize(v, cols);
      const double norm = v.norm();
      if (norm > 1e-8) return v / norm;
    }
    return std::nullopt;
  };

  auto start = random_unit(0);
  if (!start) throw NumericError("lanczos: could not build a start vector");
  Eigen::VectorXd q = std::move(*start);
  double anorm = 0.0;

  for (Eigen::Index j = 0; j < cap; ++j) {
    basis.col(j) = q;
    Eigen::VectorXd w = a * q;
    const double aj = q.dot(w);
    alpha.push_back(aj);
    orthogonalize(w, j + 1);
    const double bj = w.norm();
    anorm = std::max(anorm, std::abs(aj) + bj + (j > 0 ? beta[j - 1] : 0.0));

    const Eigen::Index steps = j + 1;
    const bool exhausted = steps == cap;
    const bool breakdown = bj <= 1e-12 * std::max(anorm, 1.0);
    const bool check = exhausted || breakdown || steps < 32 || steps % 8 == 0;
    if (check) {
      Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), steps);
      Eigen::VectorXd sub(std::max<Eigen::Index>(steps - 1, 0));
      for (Eigen::Index i = 0; i + 1 < steps; ++i) sub(i) = beta[i];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
      tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
      const double theta = tri.eigenvalues()(0);
      const Eigen::VectorXd s = tri.eigenvectors().col(0);
      const double ritz_residual = bj * std::abs(s(steps - 1));
      // A breakdown from a random start means the Krylov space already holds
      // every distinct eigenvalue the start vector touches, so the smallest
      // Ritz value is final.
      if (ritz_residual <= tol || exhausted || breakdown) {
        Eigen::VectorXd v = basis.leftCols(steps) * s;
        if (deflating) v -= deflate * deflate.dot(v);
        v.normalize();
        SymmetricEigenpair out;
        out.value = theta;
        out.residual = (a * v - theta * v).norm();
        out.vector = std::move(v);
        out.iterations = static_cast<int>(steps);
        out.converged = ritz_residual <= tol || breakdown ||
                        (exhausted && steps == space);
        return out;
      }
    }
    beta.push_back(bj);
    q = w / bj;
  }
  throw NumericError("lanczos: unreachable");
}

}  // namespace relabel
