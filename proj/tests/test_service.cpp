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

#include <thread>

#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "relabel/service.hpp"

namespace relabel {
namespace {

using nlohmann::json;
using testing::TempDir;

// Two images of one-hot block features and an identity head, so class 0
// ("plane") is exactly the block and class 1 ("sky") the background.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    PatchFeatureMap a = testing::block_fmap(8, 8, 2, 2, 6, 6);
    a.image_id = "a";
    PatchFeatureMap b = testing::block_fmap(8, 8, 0, 0, 8, 2);
    b.image_id = "b";
    save_feature_map(dir_ / "a.rltf", a);
    save_feature_map(dir_ / "b.rltf", b);
    write_file(dir_ / "a.pgm", "P5\n1 1\n255\n\x7f");
    Manifest m;
    m.entries.push_back({"a", dir_ / "a.rltf", std::nullopt, 0, 32, 32, dir_ / "a.pgm"});
    m.entries.push_back({"b", dir_ / "b.rltf", std::nullopt, 1, 32, 32, std::nullopt});
    write_manifest(dir_ / "manifest.tsv", m);

    LabelerHead h;
    h.activation = Activation::Identity;
    h.w1 = Eigen::MatrixXd::Identity(2, 2);
    h.b1 = Eigen::VectorXd::Zero(2);
    h.w2 = Eigen::MatrixXd::Identity(2, 2);
    h.b2 = Eigen::VectorXd::Zero(2);
    save_head(dir_ / "head.rlt", h, TrainConfig{});
    write_file(dir_ / "names.txt", "plane\nsky\n");

    opt_.manifest = dir_ / "manifest.tsv";
    opt_.head = dir_ / "head.rlt";
    opt_.class_names = dir_ / "names.txt";
    opt_.annotations_out = dir_ / "out" / "annotations.jsonl";
  }

  static json body(const HttpResponse& r) { return json::parse(r.body); }

  TempDir dir_;
  ServiceOptions opt_;
};

TEST_F(ServiceTest, ListsImages) {
  AnnotationService s(opt_);
  const HttpResponse r = s.handle("GET", "/images", "");
  ASSERT_EQ(r.status, 200);
  const json j = body(r);
  ASSERT_EQ(j["images"].size(), 2u);
  EXPECT_EQ(j["images"][0]["image_id"], "a");
  EXPECT_EQ(j["images"][0]["has_preview"], true);
  EXPECT_EQ(j["images"][1]["has_preview"], false);
  EXPECT_EQ(j["images"][1]["width"], 32);
  EXPECT_EQ(s.handle("POST", "/images", "").status, 405);
}

TEST_F(ServiceTest, ServesPreviews) {
  AnnotationService s(opt_);
  const HttpResponse r = s.handle("GET", "/images/a/preview", "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/x-portable-graymap");
  EXPECT_EQ(r.body, read_file(dir_ / "a.pgm"));
  EXPECT_EQ(body(s.handle("GET", "/images/b/preview", ""))["code"], "no_preview");
  EXPECT_EQ(s.handle("GET", "/images/zz/preview", "").status, 404);
}

TEST_F(ServiceTest, PredictRanksTheBoxedClassFirst) {
  AnnotationService s(opt_);
  const HttpResponse r =
      s.handle("POST", "/predict", R"({"image_id":"a","box":[0.25,0.25,0.75,0.75],"top_m":2})");
  ASSERT_EQ(r.status, 200);
  const json j = body(r);
  ASSERT_EQ(j["predictions"].size(), 2u);
  EXPECT_EQ(j["predictions"][0][0], "plane");
  EXPECT_GT(j["predictions"][0][1].get<double>(), j["predictions"][1][1].get<double>());
  const json sky = body(s.handle("POST", "/predict",
                                 R"({"image_id":"a","box":[0.0,0.0,0.2,0.2],"top_m":1})"));
  ASSERT_EQ(sky["predictions"].size(), 1u);
  EXPECT_EQ(sky["predictions"][0][0], "sky");
  // Identical requests give identical bytes.
  EXPECT_EQ(s.handle("POST", "/predict", R"({"image_id":"a","box":[0.25,0.25,0.75,0.75]})").body,
            s.handle("POST", "/predict", R"({"image_id":"a","box":[0.25,0.25,0.75,0.75]})").body);
}

TEST_F(ServiceTest, PredictRejectsBadRequests) {
  AnnotationService s(opt_);
  auto code = [&](const std::string& b) {
    const HttpResponse r = s.handle("POST", "/predict", b);
    return std::make_pair(r.status, body(r)["code"].get<std::string>());
  };
  EXPECT_EQ(code(R"({"image_id":"a","box":[0.5,0.1,0.4,0.9]})"),
            std::make_pair(400, std::string("bad_box")));
  EXPECT_EQ(code(R"({"image_id":"a","box":[0.1,0.1,0.4]})").second, "bad_box");
  EXPECT_EQ(code(R"({"image_id":"a","box":[0.1,0.1,0.4,1.5]})").second, "bad_box");
  EXPECT_EQ(code(R"({"image_id":"zz","box":[0.1,0.1,0.4,0.9]})"),
            std::make_pair(404, std::string("unknown_image")));
  EXPECT_EQ(code("not json").second, "bad_request");
  EXPECT_EQ(code(R"({"image_id":"a","box":[0.1,0.1,0.4,0.9],"top_m":0})").second,
            "bad_request");
  EXPECT_EQ(s.handle("GET", "/predict", "").status, 405);
  EXPECT_EQ(body(s.handle("GET", "/nowhere", ""))["code"], "not_found");
}

TEST_F(ServiceTest, AnnotationsAppendAndReload) {
  {
    AnnotationService s(opt_);
    HttpResponse r = s.handle("POST", "/annotations",
                              R"({"image_id":"a","box":[0.1,0.2,0.3,0.4],"class":"plane"})");
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(body(r)["class"], "plane");
    r = s.handle("POST", "/annotations", R"({"image_id":"a","box":[0.5,0.5,0.9,0.9],"class":1})");
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(body(r)["class"], "sky");
    EXPECT_EQ(body(s.handle("POST", "/annotations",
                            R"({"image_id":"a","box":[0.1,0.2,0.3,0.4],"class":"car"})"))["code"],
              "unknown_class");
    EXPECT_EQ(body(s.handle("POST", "/annotations",
                            R"({"image_id":"a","box":[0.1,0.2,0.3,0.4],"class":7})"))["code"],
              "unknown_class");
    EXPECT_EQ(s.handle("POST", "/annotations",
                       R"({"image_id":"q","box":[0.1,0.2,0.3,0.4],"class":0})")
                  .status,
              404);
    const json got = body(s.handle("GET", "/annotations/a", ""));
    ASSERT_EQ(got["annotations"].size(), 2u);
    EXPECT_EQ(got["annotations"][1]["class"], "sky");
    EXPECT_TRUE(body(s.handle("GET", "/annotations/b", ""))["annotations"].empty());
  }
  const std::string file = read_file(opt_.annotations_out);
  EXPECT_EQ(std::count(file.begin(), file.end(), '\n'), 2);
  AnnotationService reloaded(opt_);
  const json got = body(reloaded.handle("GET", "/annotations/a", ""));
  ASSERT_EQ(got["annotations"].size(), 2u);
  EXPECT_EQ(got["annotations"][0]["box"], json::array({0.1, 0.2, 0.3, 0.4}));
}

TEST_F(ServiceTest, RejectsMismatchedSetup) {
  write_file(dir_ / "names3.txt", "a\nb\nc\n");
  opt_.class_names = dir_ / "names3.txt";
  EXPECT_THROW(AnnotationService{opt_}, DataError);
  opt_.class_names.reset();
  fs::create_directories(opt_.annotations_out.parent_path());
  write_file(opt_.annotations_out, "{\"image_id\":\"a\"}\n");
  EXPECT_THROW(AnnotationService{opt_}, DataError);
}

TEST_F(ServiceTest, DefaultClassNames) {
  opt_.class_names.reset();
  AnnotationService s(opt_);
  const json j = body(s.handle("POST", "/predict", R"({"image_id":"b","box":[0,0,0.2,1]})"));
  EXPECT_EQ(j["predictions"][0][0], "class_0");
}

TEST_F(ServiceTest, ServesOverHttp) {
  AnnotationService s(opt_);
  HttpListener listener(s);
  const int port = listener.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread t([&] { listener.run(); });
  httplib::Client cli("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 50 && !(res = cli.Get("/images")); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["images"].size(), 2u);
  auto p = cli.Post("/predict", R"({"image_id":"a","box":[0.25,0.25,0.75,0.75]})",
                    "application/json");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->status, 200);
  EXPECT_EQ(p->body,
            s.handle("POST", "/predict", R"({"image_id":"a","box":[0.25,0.25,0.75,0.75]})").body);
  auto bad = cli.Post("/predict", R"({"image_id":"a","box":[0.8,0,0.2,1]})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto pv = cli.Get("/images/a/preview");
  ASSERT_TRUE(pv);
  EXPECT_EQ(pv->get_header_value("Content-Type"), "image/x-portable-graymap");
  auto post = cli.Post("/annotations", R"({"image_id":"b","box":[0,0,1,1],"class":"sky"})",
                       "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 200);
  auto got = cli.Get("/annotations/b");
  ASSERT_TRUE(got);
  EXPECT_EQ(json::parse(got->body)["annotations"].size(), 1u);
  listener.stop();
  t.join();
}

}  // namespace
}  // namespace relabel
