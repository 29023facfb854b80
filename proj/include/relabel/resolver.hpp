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

// Taxonomy-ambiguity corrections from class co-occurrence statistics:
// prior propagation and asymmetric pair thresholds.

#ifndef RELABEL_RESOLVER_HPP_
#define RELABEL_RESOLVER_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "relabel/common.hpp"
#include "relabel/tensor_store.hpp"

namespace relabel {

struct CooccurrenceRow {
  int class_a = 0;
  int class_b = 0;
  long n_a = 0;
  long n_b = 0;
  long n_ab = 0;
  double conf_a_given_b = 0.0;  // N_ab / N_b
  double conf_b_given_a = 0.0;  // N_ab / N_a

  bool operator==(const CooccurrenceRow&) const = default;
};

struct CooccurrenceTable {
  int class_count = 0;
  std::vector<CooccurrenceRow> rows;

  // Throws DataError on out-of-range ids, N_ab > min(N_a, N_b), confidences
  // outside [0,1] or a repeated unordered pair.
  void validate() const;
};

// Tab-separated with the header
//   Co-occurrence  Class A  Class B  Freq(A)  Freq(B)  Conf(A|B)  Conf(B|A)
// Class cells hold a name from `class_names` or a numeric id.
CooccurrenceTable read_cooccurrence(const std::filesystem::path& path,
                                    int class_count,
                                    std::span<const std::string> class_names = {});
void write_cooccurrence(const std::filesystem::path& path,
                        const CooccurrenceTable& table,
                        std::span<const std::string> class_names = {});

// K x K: unit diagonal, C_ab = C_ba = max(N_ab / N_a, N_ab / N_b) on listed
// pairs, zero elsewhere.
Eigen::MatrixXd build_prior(const CooccurrenceTable& table);

// clip(C p, 0, 1)
Eigen::VectorXd propagate(const Eigen::MatrixXd& prior,
                          const Eigen::VectorXd& p);

struct UpgradeCounts {
  // Unrounded, uncapped solutions of the conditional-probability equations.
  double raw_m_a = 0.0;
  double raw_m_b = 0.0;
  long m_a = 0;
  long m_b = 0;
};

// M_b solves P(b|a) = (N_ab + M_b) / (N_a + M_b), M_a solves
// P(a|b) = (N_ab + M_a) / (N_b + M_a). Each is rounded to the neighbouring
// integer with the smaller substitution error, then capped as
// M_a <- max(0, min(M_a, N_a - N_ab)), M_b <- max(0, min(M_b, N_b - N_ab)).
// A target of 1 yields the cap.
UpgradeCounts solve_upgrade_counts(long n_a, long n_b, long n_ab,
                                   double p_b_given_a, double p_a_given_b);

struct CalibrationItem {
  std::string image_id;
  Eigen::VectorXd scores;  // softmax scores
  std::vector<int> labels;  // predicted label set
};

struct PairThresholds {
  int class_a = 0;
  int class_b = 0;
  double tau_a = 0.0;  // fires a when b is top-1
  double tau_b = 0.0;  // fires b when a is top-1
  long m_a = 0;
  long m_b = 0;

  bool operator==(const PairThresholds&) const = default;
};

// Threshold that never fires (strictly above any probability).
double never_threshold();

struct ThresholdSelection {
  double tau = 0.0;
  bool short_of_candidates = false;
};

// Ranks `scores` descending (ties by image id) and returns the m-th score;
// m = 0 gives never_threshold(); fewer than m candidates use them all.
ThresholdSelection select_threshold(std::span<const double> scores,
                                    std::span<const std::string> ids, long m);

// tau_b from images predicted as exactly {a}, ranked by their b score
// (and symmetrically for tau_a). `warnings` collects shortfall messages.
PairThresholds derive_thresholds(std::span<const CalibrationItem> calibration,
                                 int class_a, int class_b, long m_a, long m_b,
                                 std::vector<std::string>* warnings = nullptr);

// Counts N_a, N_b, N_ab on the calibration labels, solves for M with the
// row's conditional confidences as targets, then derives the thresholds.
PairThresholds calibrate_pair(std::span<const CalibrationItem> calibration,
                              const CooccurrenceRow& row,
                              std::vector<std::string>* warnings = nullptr);

// If a is the top-1 of `probs` and probs[b] > tau_b, b receives a's soft
// score and grounding (symmetrically for b). Top-1 and pair scores come from
// `probs`, which is left untouched, so the rule is idempotent.
ImageLabelSet apply_pairing(const ImageLabelSet& labels,
                            const Eigen::VectorXd& probs,
                            std::span<const PairThresholds> pairs);
ImageLabelSet apply_pairing(const ImageLabelSet& labels,
                            std::span<const PairThresholds> pairs);

// One line per pair: class_a class_b tau_a tau_b m_a m_b (tab-separated).
void write_pair_thresholds(const std::filesystem::path& path,
                           std::span<const PairThresholds> pairs);
std::vector<PairThresholds> read_pair_thresholds(
    const std::filesystem::path& path);

// Co-occurring class pairs with frequency >= min_freq, most frequent first.
CooccurrenceTable mine_pairs(std::span<const std::vector<int>> label_sets,
                             int class_count, long min_freq = 3);

}  // namespace relabel

#endif  // RELABEL_RESOLVER_HPP_
