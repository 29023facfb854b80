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

#include "relabel/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

namespace relabel {

namespace {

constexpr const char* kManifestHeader =
    "image_id\tfeatures\tlogits\tlabel\theight\twidth\tpreview";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where + ": bad integer '" + s + "'");
  }
  return v;
}

// Non-empty lines with trailing CR removed, paired with 1-based numbers.
std::vector<std::pair<int, std::string>> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<int, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.emplace_back(n, line);
  }
  return out;
}

fs::path relative_to(const fs::path& p, const fs::path& dir) {
  const fs::path rel = fs::absolute(p).lexically_normal().lexically_relative(
      fs::absolute(dir).lexically_normal());
  return rel.empty() ? p : rel;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::map<std::string, std::vector<const MaskProposal*>> by_image(
    const std::vector<MaskProposal>& proposals) {
  std::map<std::string, std::vector<const MaskProposal*>> out;
  for (const auto& p : proposals) out[p.image_id].push_back(&p);
  return out;
}

std::vector<DiscoveryConfig> presets_or_reference(
    const std::optional<fs::path>& path) {
  return path ? load_presets(*path) : reference_presets();
}

std::vector<CalibrationItem> calibration_items(
    std::span<const ImageLabelSet> labels, double threshold) {
  std::vector<CalibrationItem> out;
  for (const auto& l : labels) {
    CalibrationItem item;
    item.image_id = l.image_id;
    item.scores = l.soft;
    for (int c = 0; c < l.class_count(); ++c) {
      if (l.soft(c) >= threshold) item.labels.push_back(c);
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

const ManifestEntry* Manifest::find(const std::string& image_id) const {
  for (const auto& e : entries) {
    if (e.image_id == image_id) return &e;
  }
  return nullptr;
}

Manifest load_manifest(const fs::path& path) {
  const fs::path dir = path.parent_path();
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front().second != kManifestHeader) {
    throw DataError(path.string() + ": missing manifest header");
  }
  Manifest m;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(lines[i].first);
    const auto f = split(lines[i].second, '\t');
    if (f.size() != 7) throw DataError(where + ": expected 7 columns");
    ManifestEntry e;
    e.image_id = f[0];
    if (e.image_id.empty() || !seen.insert(e.image_id).second) {
      throw DataError(where + ": empty or repeated image id");
    }
    e.features = dir / f[1];
    if (f[2] != "-") e.logits = dir / f[2];
    e.label = parse_int(f[3], where);
    e.height = parse_int(f[4], where);
    e.width = parse_int(f[5], where);
    if (f[6] != "-") e.preview = dir / f[6];
    if (e.label < 0 || e.height < 1 || e.width < 1) {
      throw DataError(where + ": label and dimensions must be non-negative");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path dir = path.parent_path();
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& e : manifest.entries) {
    out << e.image_id << '\t' << relative_to(e.features, dir).generic_string()
        << '\t'
        << (e.logits ? relative_to(*e.logits, dir).generic_string() : "-")
        << '\t' << e.label << '\t' << e.height << '\t' << e.width << '\t'
        << (e.preview ? relative_to(*e.preview, dir).generic_string() : "-")
        << '\n';
  }
  write_file(path, out.str());
}

std::map<std::string, std::vector<int>> read_gt_labels(const fs::path& path) {
  std::map<std::string, std::vector<int>> out;
  for (const auto& [n, line] : read_lines(path)) {
    const std::string where = path.string() + ":" + std::to_string(n);
    const auto f = split(line, '\t');
    if (f.size() != 2) throw DataError(where + ": expected 2 columns");
    std::vector<int> labels;
    for (const auto& c : split(f[1], ',')) labels.push_back(parse_int(c, where));
    if (!out.emplace(f[0], std::move(labels)).second) {
      throw DataError(where + ": repeated image id");
    }
  }
  return out;
}

void write_gt_labels(
    const fs::path& path,
    const std::vector<std::pair<std::string, std::vector<int>>>& rows) {
  std::ostringstream out;
  for (const auto& [id, labels] : rows) {
    out << id << '\t';
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out << (i ? "," : "") << labels[i];
    }
    out << '\n';
  }
  write_file(path, out.str());
}

std::vector<GtObject> read_gt_masks(const fs::path& path) {
  std::vector<GtObject> out;
  for (const auto& [n, line] : read_lines(path)) {
    const std::string where = path.string() + ":" + std::to_string(n);
    const auto f = split(line, '\t');
    if (f.size() != 3) throw DataError(where + ": expected 3 columns");
    out.push_back(GtObject{f[0], parse_int(f[1], where), rle_decode(parse_rle(f[2]))});
  }
  return out;
}

void write_gt_masks(const fs::path& path, const std::vector<GtObject>& objects) {
  std::ostringstream out;
  for (const auto& o : objects) {
    out << o.image_id << '\t' << o.class_id << '\t'
        << to_string(rle_encode(o.pixel_mask)) << '\n';
  }
  write_file(path, out.str());
}

std::vector<std::string> read_class_names(const fs::path& path) {
  std::vector<std::string> out;
  for (const auto& [n, line] : read_lines(path)) out.push_back(line);
  if (out.empty()) throw DataError(path.string() + ": no class names");
  return out;
}

std::string CommandReport::checksum() const {
  std::string bytes;
  for (const auto& p : outputs) bytes += read_file(p);
  return hex64(fnv1a64(bytes));
}

// ---------------------------------------------------------------------------

CommandReport cmd_discover(const DiscoverOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  const auto presets = presets_or_reference(opt.presets);
  std::vector<std::vector<MaskProposal>> slots(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    PatchFeatureMap fmap = load_feature_map(e.features);
    if (fmap.image_id != e.image_id) {
      throw DataError(e.features.string() + ": image id does not match the manifest");
    }
    for (const auto& cfg : presets) {
      auto found = discover_with_pixels(fmap, cfg, e.height, e.width);
      slots[i].insert(slots[i].end(), std::make_move_iterator(found.begin()),
                      std::make_move_iterator(found.end()));
    }
  });
  std::vector<MaskProposal> all;
  std::map<std::string, long> per_preset;
  for (auto& s : slots) {
    for (auto& p : s) {
      ++per_preset[p.config_id];
      all.push_back(std::move(p));
    }
  }
  write_proposals(opt.out, all);
  std::ostringstream sum;
  sum << "discovered " << all.size() << " proposals over "
      << manifest.entries.size() << " images\n";
  for (const auto& cfg : presets) {
    sum << "  " << cfg.preset_id << ": " << per_preset[cfg.preset_id] << '\n';
  }
  return {{opt.out}, sum.str()};
}

CommandReport cmd_filter(const FilterOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  const auto proposals = read_proposals(opt.proposals);
  std::set<std::string> wanted;
  for (const auto& p : proposals) wanted.insert(p.image_id);
  std::map<std::string, LogitMap> maps;
  std::map<std::string, int> labels;
  for (const auto& e : manifest.entries) {
    if (!wanted.count(e.image_id)) continue;
    labels[e.image_id] = e.label;
    if (e.logits) maps.emplace(e.image_id, load_logit_map(*e.logits));
  }
  const FilterResult res = filter_proposals(proposals, maps, labels, opt.tau_sel);
  write_proposals(opt.out, res.kept);
  std::ostringstream sum;
  sum << "kept " << res.kept.size() << " of " << res.scores.size()
      << " scored proposals at tau_sel " << opt.tau_sel;
  if (res.skipped_images > 0) {
    sum << " (" << res.skipped_images
        << " proposals skipped: image without logit map or label)";
  }
  sum << '\n';
  return {{opt.out}, sum.str()};
}

CommandReport cmd_train(const TrainOptions& opt) {
  opt.config.validate();
  const Manifest manifest = load_manifest(opt.manifest);
  const auto proposals = read_proposals(opt.proposals);
  if (proposals.empty()) throw DataError("train: no retained proposals");

  int classes = opt.classes;
  if (classes <= 0) {
    for (const auto& e : manifest.entries) {
      if (e.logits) {
        classes = load_logit_map(*e.logits).class_count;
        break;
      }
    }
  }
  if (classes <= 0) throw DataError("train: class count unknown");

  std::map<std::string, PatchFeatureMap> fmaps;
  std::vector<TrainSample> data;
  for (const auto& p : proposals) {
    const ManifestEntry* e = manifest.find(p.image_id);
    if (e == nullptr) throw DataError("train: " + p.image_id + " not in manifest");
    if (e->label >= classes) throw DataError("train: label out of range");
    auto it = fmaps.find(p.image_id);
    if (it == fmaps.end()) {
      it = fmaps.emplace(p.image_id, load_feature_map(e->features)).first;
    }
    data.push_back(TrainSample{gather_patches(it->second, p.patch_mask), e->label});
  }
  const int dim = static_cast<int>(data.front().patches.cols());
  LabelerHead head = LabelerHead::init(dim, opt.config.hidden, classes,
                                       opt.config.seed, opt.config.activation);
  const TrainResult res = train(std::move(head), data, opt.config);
  save_head(opt.out, res.head, opt.config);

  CommandReport report{{opt.out}, ""};
  if (opt.loss_log) {
    std::ostringstream log;
    log << "epoch\tloss\n";
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", res.epoch_loss[e]);
      log << e << '\t' << buf << '\n';
    }
    write_file(*opt.loss_log, log.str());
    report.outputs.push_back(*opt.loss_log);
  }
  std::ostringstream sum;
  sum << "trained on " << data.size() << " regions, " << opt.config.epochs
      << " epochs; final loss "
      << (res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back())
      << ", train accuracy " << fixed(train_accuracy(res.head, data), 4) << '\n';
  report.summary = sum.str();
  return report;
}

CommandReport cmd_relabel(const RelabelOptions& opt) {
  opt.policy.validate();
  const Manifest manifest = load_manifest(opt.manifest);
  const auto proposals = read_proposals(opt.proposals);
  const auto grouped = by_image(proposals);
  const LabelerHead head = load_head(opt.head);
  for (const auto& p : proposals) {
    if (manifest.find(p.image_id) == nullptr) {
      throw DataError("relabel: proposal for unknown image " + p.image_id);
    }
  }

  std::vector<ImageLabelSet> records(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    const PatchFeatureMap fmap = load_feature_map(e.features);
    std::vector<RegionPrediction> preds;
    std::map<std::pair<std::string, int>, const MaskProposal*> lookup;
    if (const auto it = grouped.find(e.image_id); it != grouped.end()) {
      for (const MaskProposal* p : it->second) {
        RegionPrediction pred = predict_region(head, fmap, p->patch_mask);
        pred.mask = MaskRef{p->config_id, p->iteration_index};
        preds.push_back(std::move(pred));
        lookup[{p->config_id, p->iteration_index}] = p;
      }
    }
    ImageLabelSet local = build_local(e.image_id, preds, head.classes(), opt.policy);
    Eigen::VectorXd global;
    if (opt.policy.global == GlobalMode::Pred) {
      global = softmax(head.forward(global_average_pool(fmap)));
    }
    ImageLabelSet merged =
        merge_global(local, opt.policy, e.label,
                     opt.policy.global == GlobalMode::Pred ? &global : nullptr);
    for (auto& g : merged.groundings) {
      if (!g.mask) continue;
      const MaskProposal* p = lookup.at({g.mask->config_id, g.mask->iteration_index});
      g.rle = rle_encode(p->pixel_mask ? *p->pixel_mask : p->patch_mask);
    }
    records[i] = std::move(merged);
  });
  write_sidecar(opt.out, records);

  const LabelStats stats = label_stats(records, opt.policy.report_threshold);
  CommandReport report{{opt.out}, ""};
  if (opt.stats_out) {
    write_file(*opt.stats_out, format_stats_table(stats));
    report.outputs.push_back(*opt.stats_out);
  }
  report.summary = "relabeled " + std::to_string(records.size()) + " images (" +
                   to_string(opt.policy.strategy()) + ")\n" +
                   format_stats_table(stats);
  return report;
}

std::string to_string(ResolveMode m) {
  switch (m) {
    case ResolveMode::Prior: return "prior";
    case ResolveMode::Pairing: return "pairing";
    case ResolveMode::Both: return "both";
  }
  return "pairing";
}

ResolveMode parse_resolve_mode(std::string_view s) {
  if (s == "prior") return ResolveMode::Prior;
  if (s == "pairing") return ResolveMode::Pairing;
  if (s == "both") return ResolveMode::Both;
  throw DataError("unknown resolve mode '" + std::string(s) + "'");
}

CommandReport cmd_resolve(const ResolveOptions& opt) {
  auto records = read_sidecar(opt.labels);
  if (records.empty()) throw DataError("resolve: no label records");
  const int k = records.front().class_count();
  std::vector<std::string> names;
  if (opt.class_names) names = read_class_names(*opt.class_names);
  const CooccurrenceTable table = read_cooccurrence(opt.table, k, names);

  CommandReport report{{opt.out}, ""};
  std::ostringstream sum;
  std::vector<std::string> warnings;
  long changed = 0;

  if (opt.mode != ResolveMode::Prior) {
    const auto calibration_records =
        opt.calibration ? read_sidecar(*opt.calibration) : records;
    const auto calibration =
        calibration_items(calibration_records, opt.label_threshold);
    std::vector<PairThresholds> pairs;
    for (const auto& row : table.rows) {
      pairs.push_back(calibrate_pair(calibration, row, &warnings));
    }
    for (auto& r : records) {
      ImageLabelSet next = apply_pairing(r, pairs);
      changed += !(next == r);
      r = std::move(next);
    }
    if (opt.thresholds_out) {
      write_pair_thresholds(*opt.thresholds_out, pairs);
      report.outputs.push_back(*opt.thresholds_out);
    }
    sum << "pairing: " << pairs.size() << " pairs\n";
  }
  if (opt.mode != ResolveMode::Pairing) {
    const Eigen::MatrixXd prior = build_prior(table);
    for (auto& r : records) {
      ImageLabelSet next = r;
      next.soft = propagate(prior, r.soft);
      for (int c = 0; c < k; ++c) {
        if (next.soft(c) == r.soft(c)) continue;
        if (Grounding* g = next.grounding_for(c)) {
          g->confidence = next.soft(c);
        } else if (next.soft(c) >= opt.label_threshold) {
          Grounding g;
          g.class_id = c;
          g.confidence = next.soft(c);
          next.groundings.push_back(g);
        }
      }
      next.sort_groundings();
      changed += !(next == r);
      r = std::move(next);
    }
    sum << "prior: " << table.rows.size() << " pairs propagated\n";
  }
  write_sidecar(opt.out, records);
  sum << "updated " << changed << " of " << records.size() << " records\n";
  for (const auto& w : warnings) sum << "warning: " << w << '\n';
  report.summary = sum.str();
  return report;
}

CommandReport cmd_eval(const EvalOptions& opt) {
  const auto labels = read_sidecar(opt.labels);
  const auto gt = read_gt_labels(opt.gt);
  std::vector<EvalRecord> records;
  for (const auto& l : labels) {
    const auto it = gt.find(l.image_id);
    if (it == gt.end()) throw DataError("eval: no ground truth for " + l.image_id);
    records.push_back(EvalRecord{l.image_id, l.soft, it->second});
  }
  if (records.empty()) throw DataError("eval: no records");
  const MapResult map = mean_ap(records);
  const auto groups = subgroup_map(records);

  std::ostringstream out;
  out << "images\t" << records.size() << '\n'
      << "top1_single\t" << fixed(top1_accuracy(records, Criterion::Single)) << '\n'
      << "top1_multi\t" << fixed(top1_accuracy(records, Criterion::Multi)) << '\n'
      << "mAP\t" << fixed(map.map) << '\n'
      << "mAP_classes\t" << map.classes_used << '\n';
  if (opt.manifest) {
    const Manifest manifest = load_manifest(*opt.manifest);
    std::vector<Eigen::VectorXd> rows;
    for (const auto& e : manifest.entries) {
      rows.push_back(global_average_pool(load_feature_map(e.features)));
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    out << "knn_entropy_k" << opt.entropy_k << '\t'
        << fixed(knn_entropy(x, opt.entropy_k)) << '\n';
  }
  out << '\n' << format_subgroup_table(groups);
  write_file(opt.out, out.str());
  return {{opt.out}, out.str()};
}

CommandReport cmd_sweep(const SweepOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  const auto presets = presets_or_reference(opt.presets);
  std::map<std::string, std::vector<Mask>> gt;
  for (auto& o : read_gt_masks(opt.gt_masks)) gt[o.image_id].push_back(std::move(o.pixel_mask));
  std::vector<SweepImage> images;
  for (const auto& e : manifest.entries) {
    SweepImage s;
    s.features = load_feature_map(e.features);
    s.image_h = e.height;
    s.image_w = e.width;
    if (const auto it = gt.find(e.image_id); it != gt.end()) s.gt_masks = it->second;
    images.push_back(std::move(s));
  }
  const auto rows = sweep(presets, images, opt.workers);
  const std::string table = format_recall_table(rows);
  write_file(opt.out, table);
  return {{opt.out}, table};
}

CommandReport cmd_export_maps(const ExportMapsOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  const LabelerHead head = load_head(opt.head);
  std::vector<fs::path> outputs(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    const LogitMap lm = export_label_map(head, load_feature_map(e.features),
                                         opt.cell_h, opt.cell_w, opt.k);
    outputs[i] = opt.out_dir / (e.image_id + ".rltf");
    save_logit_map(outputs[i], lm);
  });
  return {outputs, "exported " + std::to_string(outputs.size()) + " label maps\n"};
}

CommandReport cmd_filter_masks(const FilterMasksOptions& opt) {
  const Manifest manifest = load_manifest(opt.manifest);
  const auto masks = read_proposals(opt.proposals);
  const LabelerHead head = load_head(opt.head);
  std::map<std::string, PatchFeatureMap> fmaps;
  for (const auto& m : masks) {
    if (fmaps.count(m.image_id)) continue;
    const ManifestEntry* e = manifest.find(m.image_id);
    if (e == nullptr) throw DataError("filter-masks: " + m.image_id + " not in manifest");
    fmaps.emplace(m.image_id, load_feature_map(e->features));
  }
  const MaskFilterResult res = filter_external_masks(head, masks, fmaps, opt.tau);
  std::vector<MaskProposal> kept;
  for (std::size_t i : res.kept) kept.push_back(masks[i]);
  write_proposals(opt.out, kept);
  std::ostringstream sum;
  sum << "kept " << res.kept.size() << " of " << masks.size() << " masks (fraction "
      << fixed(res.kept_fraction, 4) << ") at tau " << opt.tau << '\n';
  return {{opt.out}, sum.str()};
}

CommandReport cmd_mine_pairs(const MinePairsOptions& opt) {
  std::vector<std::vector<int>> sets;
  int k = 0;
  std::vector<std::string> names;
  if (opt.class_names) names = read_class_names(*opt.class_names);
  if (opt.labels.extension() == ".jsonl") {
    for (const auto& r : read_sidecar(opt.labels)) {
      std::vector<int> s;
      for (int c = 0; c < r.class_count(); ++c) {
        if (r.soft(c) >= opt.threshold) s.push_back(c);
      }
      k = std::max(k, r.class_count());
      sets.push_back(std::move(s));
    }
  } else {
    for (const auto& [id, labels] : read_gt_labels(opt.labels)) {
      for (int c : labels) k = std::max(k, c + 1);
      sets.push_back(labels);
    }
  }
  k = std::max(k, static_cast<int>(names.size()));
  const CooccurrenceTable table = mine_pairs(sets, k, opt.min_freq);
  write_cooccurrence(opt.out, table, names);
  return {{opt.out}, "mined " + std::to_string(table.rows.size()) +
                         " candidate pairs from " + std::to_string(sets.size()) +
                         " label sets\n"};
}

}  // namespace relabel
