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

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "relabel/pipeline.hpp"

namespace relabel {
namespace {

using testing::TempDir;

SynthOptions small_synth(const fs::path& out) {
  SynthOptions o;
  o.out_dir = out;
  o.images = 12;
  o.classes = 3;
  o.dim = 8;
  o.grid = 8;
  o.uniform_every = 4;
  o.seed = 5;
  return o;
}

TEST(Manifest, RoundTripsRelativePaths) {
  TempDir dir;
  Manifest m;
  m.entries.push_back({"a", dir.path() / "f" / "a.rltf", std::nullopt, 2, 32, 48,
                       dir.path() / "p" / "a.pgm"});
  m.entries.push_back({"b", dir.path() / "f" / "b.rltf", dir.path() / "l" / "b.rltf", 0,
                       16, 16, std::nullopt});
  write_manifest(dir / "manifest.tsv", m);
  const std::string text = read_file(dir / "manifest.tsv");
  EXPECT_NE(text.find("a\tf/a.rltf\t-\t2\t32\t48\tp/a.pgm"), std::string::npos);
  const Manifest back = load_manifest(dir / "manifest.tsv");
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[0].features, m.entries[0].features);
  EXPECT_EQ(back.entries[1].logits, m.entries[1].logits);
  EXPECT_EQ(back.entries[0].width, 48);
  EXPECT_EQ(back.find("b")->label, 0);
  EXPECT_EQ(back.find("zz"), nullptr);
}

TEST(Manifest, RejectsMalformedRows) {
  TempDir dir;
  const std::string header = "image_id\tfeatures\tlogits\tlabel\theight\twidth\tpreview\n";
  write_file(dir / "a.tsv", header + "a\tf.rltf\t-\tx\t4\t4\t-\n");
  EXPECT_THROW(load_manifest(dir / "a.tsv"), DataError);
  write_file(dir / "b.tsv", header + "a\tf.rltf\t-\t1\t4\n");
  EXPECT_THROW(load_manifest(dir / "b.tsv"), DataError);
  write_file(dir / "c.tsv", header + "a\tf.rltf\t-\t1\t4\t4\t-\na\tg.rltf\t-\t1\t4\t4\t-\n");
  EXPECT_THROW(load_manifest(dir / "c.tsv"), DataError);
  EXPECT_THROW(load_manifest(dir / "missing.tsv"), DataError);
}

TEST(GroundTruth, LabelsAndMasksRoundTrip) {
  TempDir dir;
  write_gt_labels(dir / "gt.tsv", {{"a", {2, 0}}, {"b", {1}}});
  const auto labels = read_gt_labels(dir / "gt.tsv");
  EXPECT_EQ(labels.at("a"), (std::vector<int>{2, 0}));
  GtObject o{"a", 1, testing::rect_mask(6, 5, 1, 1, 3, 4)};
  write_gt_masks(dir / "m.tsv", {o});
  const auto masks = read_gt_masks(dir / "m.tsv");
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_TRUE((masks[0].pixel_mask == o.pixel_mask).all());
  EXPECT_EQ(masks[0].class_id, 1);
}

TEST(Synth, DeterministicAndConsistent) {
  SynthOptions o = small_synth("");
  const auto a = synth_images(o);
  const auto b = synth_images(o);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features.features, b[i].features.features);
    EXPECT_EQ(a[i].objects.size(), a[i].patch_masks.size());
    EXPECT_EQ(a[i].gt_labels.front(), a[i].label);
    EXPECT_EQ(a[i].height, o.grid * o.patch_px);
    EXPECT_NO_THROW(a[i].logits.validate());
  }
  EXPECT_TRUE(a[3].objects.empty());  // every fourth image is uniform
  EXPECT_FALSE(a[0].objects.empty());
  o.seed = 6;
  EXPECT_NE(synth_images(o)[1].features.features, a[1].features.features);
}

class PipelineChain : public ::testing::Test {
 protected:
  void SetUp() override {
    cmd_synth(small_synth(dir_.path()));
    manifest_ = dir_ / "manifest.tsv";
  }
  TempDir dir_;
  fs::path manifest_;
};

TEST_F(PipelineChain, StagesProduceConsistentOutputs) {
  DiscoverOptions d;
  d.manifest = manifest_;
  d.out = dir_ / "props.tsv";
  const CommandReport dr = cmd_discover(d);
  d.workers = 3;
  d.out = dir_ / "props3.tsv";
  EXPECT_EQ(cmd_discover(d).checksum(), dr.checksum());
  EXPECT_EQ(read_file(dir_ / "props.tsv"), read_file(dir_ / "props3.tsv"));
  EXPECT_FALSE(read_proposals(dir_ / "props.tsv").empty());

  FilterOptions f;
  f.manifest = manifest_;
  f.proposals = dir_ / "props.tsv";
  f.out = dir_ / "kept.tsv";
  f.tau_sel = 0.5;
  cmd_filter(f);
  const auto kept = read_proposals(dir_ / "kept.tsv");
  EXPECT_FALSE(kept.empty());
  EXPECT_LE(kept.size(), read_proposals(dir_ / "props.tsv").size());

  TrainOptions t;
  t.manifest = manifest_;
  t.proposals = dir_ / "kept.tsv";
  t.out = dir_ / "head.rlt";
  t.loss_log = dir_ / "loss.tsv";
  t.config.epochs = 20;
  t.config.hidden = 16;
  t.config.batch_size = 8;
  cmd_train(t);
  EXPECT_EQ(load_head(dir_ / "head.rlt").classes(), 3);
  EXPECT_NE(read_file(dir_ / "loss.tsv").find("epoch\tloss"), std::string::npos);

  RelabelOptions r;
  r.manifest = manifest_;
  r.proposals = dir_ / "props.tsv";
  r.head = dir_ / "head.rlt";
  r.out = dir_ / "labels.jsonl";
  r.stats_out = dir_ / "stats.txt";
  r.policy.global = GlobalMode::Original;
  cmd_relabel(r);
  const auto labels = read_sidecar(dir_ / "labels.jsonl");
  EXPECT_EQ(labels.size(), load_manifest(manifest_).entries.size());
  for (const auto& l : labels) {
    EXPECT_EQ(l.class_count(), 3);
    EXPECT_DOUBLE_EQ(l.soft(load_manifest(manifest_).find(l.image_id)->label), 1.0);
  }
  EXPECT_NE(read_file(dir_ / "stats.txt").find("Avg."), std::string::npos);
  r.workers = 2;
  r.out = dir_ / "labels2.jsonl";
  r.stats_out.reset();
  cmd_relabel(r);
  EXPECT_EQ(read_file(dir_ / "labels.jsonl"), read_file(dir_ / "labels2.jsonl"));

  EvalOptions e;
  e.labels = dir_ / "labels.jsonl";
  e.gt = dir_ / "gt_labels.tsv";
  e.out = dir_ / "eval.txt";
  e.manifest = manifest_;
  cmd_eval(e);
  const std::string report = read_file(dir_ / "eval.txt");
  for (const char* key : {"images\t12", "top1_single", "top1_multi", "mAP", "knn_entropy_k3"}) {
    EXPECT_NE(report.find(key), std::string::npos) << key;
  }

  ResolveOptions rs;
  rs.labels = dir_ / "labels.jsonl";
  rs.table = dir_ / "cooccurrence.tsv";
  rs.class_names = dir_ / "class_names.txt";
  rs.out = dir_ / "resolved.jsonl";
  rs.thresholds_out = dir_ / "pairs.tsv";
  rs.mode = ResolveMode::Both;
  cmd_resolve(rs);
  EXPECT_EQ(read_sidecar(dir_ / "resolved.jsonl").size(), labels.size());
  EXPECT_TRUE(fs::exists(dir_ / "pairs.tsv"));
}

TEST_F(PipelineChain, MissingInputsAreDataErrors) {
  DiscoverOptions d;
  d.manifest = dir_ / "nope.tsv";
  d.out = dir_ / "props.tsv";
  EXPECT_THROW(cmd_discover(d), DataError);
  RelabelOptions r;
  r.manifest = manifest_;
  r.proposals = dir_ / "nope.tsv";
  r.head = dir_ / "nope.rlt";
  r.out = dir_ / "x.jsonl";
  EXPECT_THROW(cmd_relabel(r), DataError);
  EXPECT_THROW(parse_resolve_mode("all"), DataError);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RELABEL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const std::string out = (dir / "data").string();
  EXPECT_EQ(run_cli("synth --out " + out + " --images 4 --classes 2 --dim 8 --grid 8"), 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "manifest.tsv"));
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("synth --out " + out + " --bogus 1"), 1);
  EXPECT_EQ(run_cli("discover --manifest " + (dir / "none.tsv").string() + " --out " +
                    (dir / "p.tsv").string()),
            2);
  EXPECT_EQ(run_cli("relabel --manifest " + out + "/manifest.tsv --proposals x --head y "
                    "--out z --mode middle"),
            1);
  EXPECT_EQ(run_cli("relabel --manifest " + out + "/manifest.tsv --proposals " +
                    (dir / "none.tsv").string() + " --head y --out " + (dir / "z").string()),
            2);
}

TEST(Cli, ConfigFileSuppliesOptions) {
  TempDir dir;
  write_file(dir / "run.ini", "[synth]\nout=" + (dir / "data").string() +
                                  "\nimages=3\nclasses=2\ndim=8\ngrid=8\n");
  EXPECT_EQ(run_cli("--config " + (dir / "run.ini").string() + " synth"), 0);
  EXPECT_EQ(load_manifest(dir / "data" / "manifest.tsv").entries.size(), 3u);
}

}  // namespace
}  // namespace relabel
