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

#include "relabel/aggregator.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace relabel {

namespace {

// True when `a` should win an exact confidence tie against `b`.
bool earlier(const std::optional<MaskRef>& a, const std::optional<MaskRef>& b) {
  if (!b) return a.has_value();
  if (!a) return false;
  if (a->iteration_index != b->iteration_index) {
    return a->iteration_index < b->iteration_index;
  }
  return a->config_id < b->config_id;
}

Grounding make_grounding(int class_id, double confidence,
                         std::optional<MaskRef> mask) {
  Grounding g;
  g.class_id = class_id;
  g.confidence = confidence;
  g.mask = std::move(mask);
  return g;
}

}  // namespace

std::string to_string(LocalMode m) {
  return m == LocalMode::LocalHard ? "local-hard" : "local-soft";
}

LocalMode parse_local_mode(std::string_view s) {
  if (s == "local-hard" || s == "hard") return LocalMode::LocalHard;
  if (s == "local-soft" || s == "soft") return LocalMode::LocalSoft;
  throw DataError("unknown local mode '" + std::string(s) + "'");
}

std::string to_string(GlobalMode m) {
  switch (m) {
    case GlobalMode::None: return "none";
    case GlobalMode::Original: return "original";
    case GlobalMode::Pred: return "pred";
  }
  return "none";
}

GlobalMode parse_global_mode(std::string_view s) {
  if (s == "none") return GlobalMode::None;
  if (s == "original") return GlobalMode::Original;
  if (s == "pred") return GlobalMode::Pred;
  throw DataError("unknown global mode '" + std::string(s) + "'");
}

void AggregationPolicy::validate() const {
  if (mode == LocalMode::LocalHard && !(tau > 0.0 && tau < 1.0)) {
    throw DataError("aggregation: tau must lie in (0,1)");
  }
  if (!(report_threshold > 0.0 && report_threshold <= 1.0)) {
    throw DataError("aggregation: report_threshold must lie in (0,1]");
  }
}

Strategy AggregationPolicy::strategy() const {
  switch (global) {
    case GlobalMode::Original: return Strategy::PlusOriginal;
    case GlobalMode::Pred: return Strategy::PlusPred;
    case GlobalMode::None: break;
  }
  return mode == LocalMode::LocalHard ? Strategy::LocalHard : Strategy::LocalSoft;
}

std::vector<ClassConfidence> aggregate_masks(
    std::span<const RegionPrediction> preds) {
  std::map<int, ClassConfidence> best;
  for (const auto& p : preds) {
    if (!preds.empty() && p.image_id != preds.front().image_id) {
      throw DataError("aggregate_masks: predictions span several images");
    }
    auto it = best.find(p.top1);
    if (it == best.end()) {
      best.emplace(p.top1, ClassConfidence{p.top1, p.confidence, p.mask});
      continue;
    }
    ClassConfidence& cur = it->second;
    if (p.confidence > cur.confidence ||
        (p.confidence == cur.confidence && earlier(p.mask, cur.mask))) {
      cur.confidence = p.confidence;
      cur.mask = p.mask;
    }
  }
  std::vector<ClassConfidence> out;
  for (auto& [c, v] : best) out.push_back(v);
  return out;
}

ImageLabelSet build_local(const std::string& image_id,
                          std::span<const RegionPrediction> preds,
                          int class_count, const AggregationPolicy& policy) {
  policy.validate();
  ImageLabelSet out;
  out.image_id = image_id;
  out.strategy = policy.mode == LocalMode::LocalHard ? Strategy::LocalHard
                                                     : Strategy::LocalSoft;
  out.soft = Eigen::VectorXd::Zero(class_count);
  for (const auto& p : preds) {
    if (p.probs.size() != class_count) {
      throw DataError("build_local: prediction has the wrong class count");
    }
  }
  const auto top = aggregate_masks(preds);

  if (policy.mode == LocalMode::LocalHard) {
    std::vector<std::uint8_t> hard(class_count, 0);
    for (const auto& c : top) {
      out.soft(c.class_id) = c.confidence;
      hard[c.class_id] = c.confidence > policy.tau ? 1 : 0;
      out.groundings.push_back(make_grounding(c.class_id, c.confidence, c.mask));
    }
    out.hard = std::move(hard);
    return out;
  }

  for (const auto& p : preds) out.soft = out.soft.cwiseMax(p.probs);
  for (const auto& c : top) {
    // The mask attaining the maximum probability for this class.
    const RegionPrediction* arg = nullptr;
    for (const auto& p : preds) {
      if (arg == nullptr || p.probs(c.class_id) > arg->probs(c.class_id) ||
          (p.probs(c.class_id) == arg->probs(c.class_id) &&
           earlier(p.mask, arg->mask))) {
        arg = &p;
      }
    }
    out.groundings.push_back(
        make_grounding(c.class_id, out.soft(c.class_id), arg->mask));
  }
  return out;
}

ImageLabelSet merge_global(const ImageLabelSet& local,
                           const AggregationPolicy& policy,
                           std::optional<int> original_label,
                           const Eigen::VectorXd* global_probs) {
  if (policy.global == GlobalMode::None) return local;
  const int k = local.class_count();
  Eigen::VectorXd global = Eigen::VectorXd::Zero(k);
  if (policy.global == GlobalMode::Original) {
    if (!original_label) {
      throw DataError("merge_global: original label required for " +
                      local.image_id);
    }
    if (*original_label < 0 || *original_label >= k) {
      throw DataError("merge_global: original label out of range");
    }
    global(*original_label) = 1.0;
  } else {
    if (global_probs == nullptr || global_probs->size() != k) {
      throw DataError("merge_global: global prediction required for " +
                      local.image_id);
    }
    global = *global_probs;
  }

  ImageLabelSet out = local;
  out.strategy = policy.strategy();
  out.soft = local.soft.cwiseMax(global);
  for (int c = 0; c < k; ++c) {
    if (!(global(c) > local.soft(c))) continue;
    Grounding* g = out.grounding_for(c);
    if (g != nullptr) {
      *g = make_grounding(c, out.soft(c), std::nullopt);
    } else if (global(c) >= policy.report_threshold) {
      out.groundings.push_back(make_grounding(c, out.soft(c), std::nullopt));
    }
  }
  out.sort_groundings();
  if (out.hard) {
    for (int c = 0; c < k; ++c) {
      if (global(c) > policy.tau) (*out.hard)[c] = 1;
    }
  }
  return out;
}

int label_count(const ImageLabelSet& labels, double threshold) {
  return static_cast<int>((labels.soft.array() >= threshold).count());
}

LabelStats label_stats(std::span<const ImageLabelSet> data, double threshold) {
  LabelStats s;
  for (const auto& d : data) {
    const int n = label_count(d, threshold);
    ++s.counts[std::min(n, 4)];
    s.total_labels += n;
  }
  s.images = static_cast<long>(data.size());
  if (s.images == 0) return s;
  for (int b = 0; b < 5; ++b) {
    s.fractions[b] =
        static_cast<double>(s.counts[b]) / static_cast<double>(s.images);
  }
  s.average = static_cast<double>(s.total_labels) / static_cast<double>(s.images);
  return s;
}

std::string format_stats_table(const LabelStats& stats) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%8s %8s %8s %8s %8s %8s\n", "k=0", "k=1",
                "k=2", "k=3", "k>=4", "Avg.");
  out << buf;
  std::snprintf(buf, sizeof(buf), "%7.2f%% %7.2f%% %7.2f%% %7.2f%% %7.2f%% %8.2f\n",
                100.0 * stats.fractions[0], 100.0 * stats.fractions[1],
                100.0 * stats.fractions[2], 100.0 * stats.fractions[3],
                100.0 * stats.fractions[4], stats.average);
  out << buf;
  return out.str();
}

}  // namespace relabel
