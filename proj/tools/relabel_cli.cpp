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

// relabel: command-line front end. Exit codes: 0 success, 1 usage error,
// 2 data error, 3 other failure.

#include <iostream>

#include "CLI11.hpp"
#include "relabel/pipeline.hpp"
#include "relabel/service.hpp"

namespace {

using namespace relabel;

// Optional path bound to a plain string option.
struct OptPath {
  std::string value;
  std::optional<fs::path> get() const {
    return value.empty() ? std::nullopt : std::optional<fs::path>(value);
  }
};

CLI::Option* add_path(CLI::App* app, const std::string& name, fs::path& p,
                      const std::string& help, bool required = true) {
  auto* o = app->add_option(name, p, help);
  if (required) o->required();
  return o;
}

void add_train_config(CLI::App* app, TrainConfig& cfg, std::string& activation) {
  app->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  app->add_option("--lr", cfg.lr, "peak learning rate")->capture_default_str();
  app->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
  app->add_option("--nesterov", cfg.nesterov, "Nesterov momentum")->capture_default_str();
  app->add_option("--weight-decay", cfg.weight_decay, "L2 on weights")->capture_default_str();
  app->add_option("--warmup-epochs", cfg.warmup_epochs, "linear warmup")->capture_default_str();
  app->add_option("--batch-size", cfg.batch_size, "minibatch size")->capture_default_str();
  app->add_option("--patch-dropout", cfg.patch_dropout, "dropped patch fraction")
      ->capture_default_str();
  app->add_option("--hidden", cfg.hidden, "hidden width")->capture_default_str();
  app->add_option("--activation", activation, "relu | identity")
      ->check(CLI::IsMember({"relu", "identity"}))
      ->capture_default_str();
  app->add_option("--seed", cfg.seed, "init and shuffle seed")->capture_default_str();
}

void add_policy(CLI::App* app, std::string& mode, std::string& global,
                AggregationPolicy& p) {
  app->add_option("--mode", mode, "local-hard | local-soft")
      ->check(CLI::IsMember({"local-hard", "local-soft", "hard", "soft"}))
      ->capture_default_str();
  app->add_option("--tau", p.tau, "local-hard threshold")->capture_default_str();
  app->add_option("--global", global, "none | original | pred")
      ->check(CLI::IsMember({"none", "original", "pred"}))
      ->capture_default_str();
  app->add_option("--report-threshold", p.report_threshold,
                  "soft score counted as a label")
      ->capture_default_str();
}

void print(const CommandReport& r, bool with_checksum = true) {
  std::cout << r.summary;
  if (with_checksum && !r.outputs.empty()) {
    std::cout << "checksum " << r.checksum() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relabel: grounded multi-label relabeling pipeline"};
  app.set_config("--config", "", "INI file; [subcommand] sections set its options");
  app.require_subcommand(1);

  SynthOptions synth;
  std::string synth_dir;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic planted-object dataset");
  c_synth->add_option("--out", synth_dir, "output directory")->required();
  c_synth->add_option("--images", synth.images)->capture_default_str();
  c_synth->add_option("--classes", synth.classes)->capture_default_str();
  c_synth->add_option("--dim", synth.dim)->capture_default_str();
  c_synth->add_option("--grid", synth.grid)->capture_default_str();
  c_synth->add_option("--patch-px", synth.patch_px)->capture_default_str();
  c_synth->add_option("--noise", synth.noise)->capture_default_str();
  c_synth->add_option("--uniform-every", synth.uniform_every)->capture_default_str();
  c_synth->add_option("--partner-prob", synth.partner_prob)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--previews", synth.previews)->capture_default_str();

  DiscoverOptions discover;
  OptPath discover_presets;
  auto* c_discover = app.add_subcommand("discover", "run MaskCut over a manifest");
  add_path(c_discover, "--manifest", discover.manifest, "manifest.tsv");
  c_discover->add_option("--presets", discover_presets.value,
                         "preset INI (reference presets when omitted)");
  add_path(c_discover, "--out", discover.out, "proposal TSV");
  c_discover->add_option("--workers", discover.workers)->capture_default_str();

  FilterOptions filter;
  auto* c_filter = app.add_subcommand("filter", "keep proposals the teacher maps support");
  add_path(c_filter, "--manifest", filter.manifest, "manifest.tsv");
  add_path(c_filter, "--proposals", filter.proposals, "proposal TSV");
  add_path(c_filter, "--out", filter.out, "retained proposal TSV");
  c_filter->add_option("--tau-sel", filter.tau_sel)->capture_default_str();

  TrainOptions train;
  std::string train_activation = "relu";
  OptPath train_log;
  auto* c_train = app.add_subcommand("train", "train the region labeler head");
  add_path(c_train, "--manifest", train.manifest, "manifest.tsv");
  add_path(c_train, "--proposals", train.proposals, "retained proposal TSV");
  add_path(c_train, "--out", train.out, "head checkpoint");
  c_train->add_option("--loss-log", train_log.value, "per-epoch loss TSV");
  c_train->add_option("--classes", train.classes, "class count (0: from logit maps)")
      ->capture_default_str();
  add_train_config(c_train, train.config, train_activation);

  RelabelOptions relabel_opt;
  std::string relabel_mode = "local-soft", relabel_global = "none";
  OptPath relabel_stats;
  auto* c_relabel = app.add_subcommand("relabel", "aggregate region predictions into labels");
  add_path(c_relabel, "--manifest", relabel_opt.manifest, "manifest.tsv");
  add_path(c_relabel, "--proposals", relabel_opt.proposals, "proposal TSV");
  add_path(c_relabel, "--head", relabel_opt.head, "head checkpoint");
  add_path(c_relabel, "--out", relabel_opt.out, "annotation sidecar (JSONL)");
  c_relabel->add_option("--stats", relabel_stats.value, "label-count table");
  c_relabel->add_option("--workers", relabel_opt.workers)->capture_default_str();
  add_policy(c_relabel, relabel_mode, relabel_global, relabel_opt.policy);

  ResolveOptions resolve;
  std::string resolve_mode = "pairing";
  OptPath resolve_names, resolve_calib, resolve_thresholds;
  auto* c_resolve = app.add_subcommand("resolve", "apply co-occurrence corrections");
  add_path(c_resolve, "--labels", resolve.labels, "annotation sidecar");
  add_path(c_resolve, "--table", resolve.table, "co-occurrence TSV");
  add_path(c_resolve, "--out", resolve.out, "adjusted sidecar");
  c_resolve->add_option("--class-names", resolve_names.value, "class names, one per line");
  c_resolve->add_option("--calibration", resolve_calib.value,
                        "calibration sidecar (defaults to --labels)");
  c_resolve->add_option("--thresholds-out", resolve_thresholds.value,
                        "per-pair threshold TSV");
  c_resolve->add_option("--mode", resolve_mode, "prior | pairing | both")
      ->check(CLI::IsMember({"prior", "pairing", "both"}))
      ->capture_default_str();
  c_resolve->add_option("--label-threshold", resolve.label_threshold)
      ->capture_default_str();

  EvalOptions eval;
  OptPath eval_manifest;
  auto* c_eval = app.add_subcommand("eval", "score labels against ground truth");
  add_path(c_eval, "--labels", eval.labels, "annotation sidecar");
  add_path(c_eval, "--gt", eval.gt, "gt_labels.tsv");
  add_path(c_eval, "--out", eval.out, "report");
  c_eval->add_option("--manifest", eval_manifest.value,
                     "manifest for the feature-entropy line");
  c_eval->add_option("--entropy-k", eval.entropy_k)->capture_default_str();

  SweepOptions sweep_opt;
  OptPath sweep_presets;
  auto* c_sweep = app.add_subcommand("sweep", "object recall per preset");
  add_path(c_sweep, "--manifest", sweep_opt.manifest, "manifest.tsv");
  c_sweep->add_option("--presets", sweep_presets.value, "preset INI");
  add_path(c_sweep, "--gt-masks", sweep_opt.gt_masks, "gt_masks.tsv");
  add_path(c_sweep, "--out", sweep_opt.out, "recall table");
  c_sweep->add_option("--workers", sweep_opt.workers)->capture_default_str();

  ExportMapsOptions export_opt;
  auto* c_export = app.add_subcommand("export-maps", "write per-cell top-k label maps");
  add_path(c_export, "--manifest", export_opt.manifest, "manifest.tsv");
  add_path(c_export, "--head", export_opt.head, "head checkpoint");
  add_path(c_export, "--out-dir", export_opt.out_dir, "output directory");
  c_export->add_option("--cell-h", export_opt.cell_h)->capture_default_str();
  c_export->add_option("--cell-w", export_opt.cell_w)->capture_default_str();
  c_export->add_option("--k", export_opt.k)->capture_default_str();
  c_export->add_option("--workers", export_opt.workers)->capture_default_str();

  FilterMasksOptions fmasks;
  auto* c_fmasks = app.add_subcommand("filter-masks", "drop low-confidence external masks");
  add_path(c_fmasks, "--manifest", fmasks.manifest, "manifest.tsv");
  add_path(c_fmasks, "--proposals", fmasks.proposals, "mask TSV");
  add_path(c_fmasks, "--head", fmasks.head, "head checkpoint");
  add_path(c_fmasks, "--out", fmasks.out, "retained mask TSV");
  c_fmasks->add_option("--tau", fmasks.tau)->capture_default_str();

  MinePairsOptions mine;
  OptPath mine_names;
  auto* c_mine = app.add_subcommand("mine-pairs", "list frequent class pairs for review");
  add_path(c_mine, "--labels", mine.labels, "sidecar (.jsonl) or gt_labels.tsv");
  add_path(c_mine, "--out", mine.out, "co-occurrence TSV");
  c_mine->add_option("--class-names", mine_names.value, "class names");
  c_mine->add_option("--min-freq", mine.min_freq)->capture_default_str();
  c_mine->add_option("--threshold", mine.threshold)->capture_default_str();

  ServiceOptions serve_opt;
  OptPath serve_names, serve_ui;
  auto* c_serve = app.add_subcommand("serve", "run the region annotation service");
  add_path(c_serve, "--manifest", serve_opt.manifest, "manifest.tsv");
  add_path(c_serve, "--head", serve_opt.head, "head checkpoint");
  add_path(c_serve, "--annotations", serve_opt.annotations_out, "annotation export (JSONL)");
  c_serve->add_option("--class-names", serve_names.value, "class names");
  c_serve->add_option("--ui-dir", serve_ui.value, "static UI directory");
  c_serve->add_option("--host", serve_opt.host)->capture_default_str();
  c_serve->add_option("--port", serve_opt.port)->capture_default_str();
  c_serve->add_option("--top-m", serve_opt.default_top_m)->capture_default_str();
  c_serve->add_option("--box-samples", serve_opt.box_samples)->capture_default_str();
  c_serve->add_option("--threads", serve_opt.threads)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (c_synth->parsed()) {
      synth.out_dir = synth_dir;
      print(cmd_synth(synth));
    } else if (c_discover->parsed()) {
      discover.presets = discover_presets.get();
      print(cmd_discover(discover));
    } else if (c_filter->parsed()) {
      print(cmd_filter(filter));
    } else if (c_train->parsed()) {
      train.loss_log = train_log.get();
      train.config.activation = parse_activation(train_activation);
      print(cmd_train(train));
    } else if (c_relabel->parsed()) {
      relabel_opt.stats_out = relabel_stats.get();
      relabel_opt.policy.mode = parse_local_mode(relabel_mode);
      relabel_opt.policy.global = parse_global_mode(relabel_global);
      print(cmd_relabel(relabel_opt));
    } else if (c_resolve->parsed()) {
      resolve.class_names = resolve_names.get();
      resolve.calibration = resolve_calib.get();
      resolve.thresholds_out = resolve_thresholds.get();
      resolve.mode = parse_resolve_mode(resolve_mode);
      print(cmd_resolve(resolve));
    } else if (c_eval->parsed()) {
      eval.manifest = eval_manifest.get();
      print(cmd_eval(eval), false);
    } else if (c_sweep->parsed()) {
      sweep_opt.presets = sweep_presets.get();
      print(cmd_sweep(sweep_opt), false);
    } else if (c_export->parsed()) {
      print(cmd_export_maps(export_opt));
    } else if (c_fmasks->parsed()) {
      print(cmd_filter_masks(fmasks));
    } else if (c_mine->parsed()) {
      mine.class_names = mine_names.get();
      print(cmd_mine_pairs(mine));
    } else if (c_serve->parsed()) {
      serve_opt.class_names = serve_names.get();
      serve_opt.ui_dir = serve_ui.get();
      AnnotationService service(serve_opt);
      std::cerr << "listening on " << serve_opt.host << ':' << serve_opt.port << '\n';
      serve(service);
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
