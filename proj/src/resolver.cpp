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

#include "relabel/resolver.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace relabel {

namespace {

constexpr const char* kTableHeader =
    "Co-occurrence\tClass A\tClass B\tFreq(A)\tFreq(B)\tConf(A|B)\tConf(B|A)";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

template <typename T>
T parse_field(const std::string& s, const std::string& where) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where + ": bad number '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int resolve_class(const std::string& cell, int class_count,
                  std::span<const std::string> names, const std::string& where) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == cell) return static_cast<int>(i);
  }
  const int id = parse_field<int>(cell, where);
  if (id < 0 || id >= class_count) {
    throw DataError(where + ": class '" + cell + "' out of range");
  }
  return id;
}

// Rounds a positive finite raw count to the neighbour with the smaller
// substitution error in (n_ab + m) / (n + m) = p; ties go down.
double round_by_substitution(double raw, long n, long n_ab, double p) {
  const double lo = std::floor(raw);
  const double hi = std::ceil(raw);
  auto err = [&](double m) {
    const double denom = static_cast<double>(n) + m;
    return denom > 0.0 ? std::abs((static_cast<double>(n_ab) + m) / denom - p)
                       : std::numeric_limits<double>::infinity();
  };
  return err(hi) < err(lo) ? hi : lo;
}

long solve_one(long n, long n_other, long n_ab, double p, double* raw) {
  // (n_ab + m) / (n + m) = p  =>  m = (p n - n_ab) / (1 - p)
  const long cap = n_other - n_ab;
  if (p >= 1.0) {
    *raw = std::numeric_limits<double>::infinity();
    return std::max(0L, cap);
  }
  *raw = (p * static_cast<double>(n) - static_cast<double>(n_ab)) / (1.0 - p);
  if (!(*raw > 0.0)) return 0;
  const double rounded = round_by_substitution(*raw, n, n_ab, p);
  return std::max(0L, std::min(static_cast<long>(rounded), cap));
}

}  // namespace

void CooccurrenceTable::validate() const {
  std::set<std::pair<int, int>> seen;
  for (const auto& r : rows) {
    if (r.class_a < 0 || r.class_a >= class_count || r.class_b < 0 ||
        r.class_b >= class_count || r.class_a == r.class_b) {
      throw DataError("co-occurrence table: bad class pair");
    }
    if (r.n_a <= 0 || r.n_b <= 0) {
      throw DataError("co-occurrence table: class frequency must be positive");
    }
    if (r.n_ab < 0 || r.n_ab > std::min(r.n_a, r.n_b)) {
      throw DataError("co-occurrence table: N_ab exceeds min(N_a, N_b)");
    }
    if (!(r.conf_a_given_b >= 0.0 && r.conf_a_given_b <= 1.0) ||
        !(r.conf_b_given_a >= 0.0 && r.conf_b_given_a <= 1.0)) {
      throw DataError("co-occurrence table: confidence outside [0,1]");
    }
    const auto key = std::minmax(r.class_a, r.class_b);
    if (!seen.insert({key.first, key.second}).second) {
      throw DataError("co-occurrence table: repeated pair");
    }
  }
}

CooccurrenceTable read_cooccurrence(const std::filesystem::path& path,
                                    int class_count,
                                    std::span<const std::string> class_names) {
  std::istringstream in(read_file(path));
  CooccurrenceTable table;
  table.class_count = class_count;
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!header) {
      if (line != kTableHeader) throw DataError(where + ": unexpected header");
      header = true;
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 7) throw DataError(where + ": expected 7 columns");
    CooccurrenceRow r;
    r.n_ab = parse_field<long>(f[0], where);
    r.class_a = resolve_class(f[1], class_count, class_names, where);
    r.class_b = resolve_class(f[2], class_count, class_names, where);
    r.n_a = parse_field<long>(f[3], where);
    r.n_b = parse_field<long>(f[4], where);
    r.conf_a_given_b = parse_field<double>(f[5], where);
    r.conf_b_given_a = parse_field<double>(f[6], where);
    table.rows.push_back(r);
  }
  if (!header) throw DataError(path.string() + ": empty co-occurrence table");
  table.validate();
  return table;
}

void write_cooccurrence(const std::filesystem::path& path,
                        const CooccurrenceTable& table,
                        std::span<const std::string> class_names) {
  auto name = [&](int c) {
    return static_cast<std::size_t>(c) < class_names.size() ? class_names[c]
                                                            : std::to_string(c);
  };
  std::ostringstream out;
  out << kTableHeader << '\n';
  for (const auto& r : table.rows) {
    out << r.n_ab << '\t' << name(r.class_a) << '\t' << name(r.class_b) << '\t'
        << r.n_a << '\t' << r.n_b << '\t' << format_double(r.conf_a_given_b)
        << '\t' << format_double(r.conf_b_given_a) << '\n';
  }
  write_file(path, out.str());
}

Eigen::MatrixXd build_prior(const CooccurrenceTable& table) {
  table.validate();
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(table.class_count, table.class_count);
  for (const auto& r : table.rows) {
    const double v = std::max(static_cast<double>(r.n_ab) / r.n_a,
                              static_cast<double>(r.n_ab) / r.n_b);
    c(r.class_a, r.class_b) = v;
    c(r.class_b, r.class_a) = v;
  }
  return c;
}

Eigen::VectorXd propagate(const Eigen::MatrixXd& prior,
                          const Eigen::VectorXd& p) {
  if (prior.rows() != p.size() || prior.cols() != p.size()) {
    throw DataError("propagate: prior and label sizes differ");
  }
  return (prior * p).cwiseMax(0.0).cwiseMin(1.0);
}

UpgradeCounts solve_upgrade_counts(long n_a, long n_b, long n_ab,
                                   double p_b_given_a, double p_a_given_b) {
  if (n_a <= 0 || n_b <= 0 || n_ab < 0 || n_ab > std::min(n_a, n_b)) {
    throw DataError("solve_upgrade_counts: need 0 <= N_ab <= min(N_a, N_b)");
  }
  if (!(p_b_given_a >= 0.0 && p_b_given_a <= 1.0) ||
      !(p_a_given_b >= 0.0 && p_a_given_b <= 1.0)) {
    throw DataError("solve_upgrade_counts: targets must lie in [0,1]");
  }
  UpgradeCounts out;
  out.m_b = solve_one(n_a, n_b, n_ab, p_b_given_a, &out.raw_m_b);
  out.m_a = solve_one(n_b, n_a, n_ab, p_a_given_b, &out.raw_m_a);
  return out;
}

double never_threshold() { return std::nextafter(1.0, 2.0); }

ThresholdSelection select_threshold(std::span<const double> scores,
                                    std::span<const std::string> ids, long m) {
  if (scores.size() != ids.size()) {
    throw DataError("select_threshold: scores and ids differ in length");
  }
  ThresholdSelection out;
  if (m <= 0) {
    out.tau = never_threshold();
    return out;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  if (order.empty()) {
    out.tau = never_threshold();
    out.short_of_candidates = true;
    return out;
  }
  const std::size_t want = static_cast<std::size_t>(m);
  out.short_of_candidates = want > order.size();
  out.tau = scores[order[std::min(want, order.size()) - 1]];
  return out;
}

PairThresholds derive_thresholds(std::span<const CalibrationItem> calibration,
                                 int class_a, int class_b, long m_a, long m_b,
                                 std::vector<std::string>* warnings) {
  auto side = [&](int only, int missing, long m, double* tau) {
    std::vector<double> scores;
    std::vector<std::string> ids;
    for (const auto& item : calibration) {
      if (item.labels.size() == 1 && item.labels.front() == only) {
        if (missing >= item.scores.size()) {
          throw DataError("derive_thresholds: score vector too short");
        }
        scores.push_back(item.scores(missing));
        ids.push_back(item.image_id);
      }
    }
    const ThresholdSelection sel = select_threshold(scores, ids, m);
    *tau = sel.tau;
    if (sel.short_of_candidates && warnings != nullptr) {
      warnings->push_back("pair (" + std::to_string(class_a) + ", " +
                          std::to_string(class_b) + "): wanted " +
                          std::to_string(m) + " images labeled only " +
                          std::to_string(only) + ", found " +
                          std::to_string(scores.size()));
    }
  };
  PairThresholds out;
  out.class_a = class_a;
  out.class_b = class_b;
  out.m_a = m_a;
  out.m_b = m_b;
  side(class_a, class_b, m_b, &out.tau_b);
  side(class_b, class_a, m_a, &out.tau_a);
  return out;
}

PairThresholds calibrate_pair(std::span<const CalibrationItem> calibration,
                              const CooccurrenceRow& row,
                              std::vector<std::string>* warnings) {
  long n_a = 0;
  long n_b = 0;
  long n_ab = 0;
  for (const auto& item : calibration) {
    const bool has_a = std::find(item.labels.begin(), item.labels.end(),
                                 row.class_a) != item.labels.end();
    const bool has_b = std::find(item.labels.begin(), item.labels.end(),
                                 row.class_b) != item.labels.end();
    n_a += has_a;
    n_b += has_b;
    n_ab += has_a && has_b;
  }
  if (n_a == 0 || n_b == 0) {
    if (warnings != nullptr) {
      warnings->push_back("pair (" + std::to_string(row.class_a) + ", " +
                          std::to_string(row.class_b) +
                          "): a class never occurs in the calibration set");
    }
    PairThresholds none;
    none.class_a = row.class_a;
    none.class_b = row.class_b;
    none.tau_a = never_threshold();
    none.tau_b = never_threshold();
    return none;
  }
  const UpgradeCounts m = solve_upgrade_counts(
      n_a, n_b, n_ab, row.conf_b_given_a, row.conf_a_given_b);
  return derive_thresholds(calibration, row.class_a, row.class_b, m.m_a, m.m_b,
                           warnings);
}

ImageLabelSet apply_pairing(const ImageLabelSet& labels,
                            const Eigen::VectorXd& probs,
                            std::span<const PairThresholds> pairs) {
  if (probs.size() != labels.class_count()) {
    throw DataError("apply_pairing: score vector has the wrong length");
  }
  ImageLabelSet out = labels;
  if (probs.size() == 0) return out;
  const int top = static_cast<int>(argmax_lowest(probs));
  auto add = [&](int from, int to) {
    const double conf = std::max(out.soft(to), out.soft(from));
    out.soft(to) = conf;
    if (out.hard) (*out.hard)[to] = 1;
    Grounding g;
    if (const Grounding* src = out.grounding_for(from)) g = *src;
    g.class_id = to;
    g.confidence = conf;
    if (Grounding* dst = out.grounding_for(to)) {
      if (dst->confidence < conf) *dst = g;
      dst->confidence = conf;
    } else {
      out.groundings.push_back(g);
    }
  };
  for (const auto& p : pairs) {
    if (p.class_a >= probs.size() || p.class_b >= probs.size()) {
      throw DataError("apply_pairing: pair class out of range");
    }
    if (top == p.class_a && probs(p.class_b) > p.tau_b) add(p.class_a, p.class_b);
    if (top == p.class_b && probs(p.class_a) > p.tau_a) add(p.class_b, p.class_a);
  }
  out.sort_groundings();
  return out;
}

ImageLabelSet apply_pairing(const ImageLabelSet& labels,
                            std::span<const PairThresholds> pairs) {
  const Eigen::VectorXd probs = labels.soft;
  return apply_pairing(labels, probs, pairs);
}

void write_pair_thresholds(const std::filesystem::path& path,
                           std::span<const PairThresholds> pairs) {
  std::ostringstream out;
  out << "class_a\tclass_b\ttau_a\ttau_b\tm_a\tm_b\n";
  for (const auto& p : pairs) {
    out << p.class_a << '\t' << p.class_b << '\t' << format_double(p.tau_a)
        << '\t' << format_double(p.tau_b) << '\t' << p.m_a << '\t' << p.m_b
        << '\n';
  }
  write_file(path, out.str());
}

std::vector<PairThresholds> read_pair_thresholds(
    const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<PairThresholds> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto f = split_tabs(line);
    if (f.size() != 6) throw DataError(where + ": expected 6 columns");
    PairThresholds p;
    p.class_a = parse_field<int>(f[0], where);
    p.class_b = parse_field<int>(f[1], where);
    p.tau_a = parse_field<double>(f[2], where);
    p.tau_b = parse_field<double>(f[3], where);
    p.m_a = parse_field<long>(f[4], where);
    p.m_b = parse_field<long>(f[5], where);
    out.push_back(p);
  }
  return out;
}

CooccurrenceTable mine_pairs(std::span<const std::vector<int>> label_sets,
                             int class_count, long min_freq) {
  std::vector<long> freq(class_count, 0);
  std::map<std::pair<int, int>, long> pair_freq;
  for (const auto& raw : label_sets) {
    std::vector<int> set = raw;
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set[i] < 0 || set[i] >= class_count) {
        throw DataError("mine_pairs: label out of range");
      }
      ++freq[set[i]];
      for (std::size_t j = i + 1; j < set.size(); ++j) {
        ++pair_freq[{set[i], set[j]}];
      }
    }
  }
  CooccurrenceTable table;
  table.class_count = class_count;
  for (const auto& [key, n_ab] : pair_freq) {
    if (n_ab < min_freq) continue;
    CooccurrenceRow r;
    r.class_a = key.first;
    r.class_b = key.second;
    r.n_a = freq[key.first];
    r.n_b = freq[key.second];
    r.n_ab = n_ab;
    r.conf_a_given_b = static_cast<double>(n_ab) / r.n_b;
    r.conf_b_given_a = static_cast<double>(n_ab) / r.n_a;
    table.rows.push_back(r);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const auto& a, const auto& b) { return a.n_ab > b.n_ab; });
  return table;
}

}  // namespace relabel
