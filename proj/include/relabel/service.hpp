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

// Region annotation service. Routing lives in handle() so it can be driven
// without a socket; serve() binds it to an HTTP listener.
//
//   GET  /images                 {"images":[{"image_id","height","width","has_preview"}]}
//   GET  /images/{id}/preview    raw preview bytes
//   POST /predict                {"image_id","box":[x0,y0,x1,y1],"top_m"}
//                                -> {"image_id","box","predictions":[[class_name,score]]}
//   POST /annotations            {"image_id","box","class"} -> the stored record
//   GET  /annotations/{id}       {"image_id","annotations":[{"box","class"}]}
//
// Failures return {"code","message"} with 400 (bad_request, bad_box,
// unknown_class), 404 (unknown_image, no_preview, not_found) or 405.

#ifndef RELABEL_SERVICE_HPP_
#define RELABEL_SERVICE_HPP_

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "relabel/labeler.hpp"
#include "relabel/pipeline.hpp"

namespace relabel {

struct ServiceOptions {
  fs::path manifest;
  fs::path head;
  std::optional<fs::path> class_names;  // "class_<c>" when absent
  fs::path annotations_out;             // append-only JSONL
  std::optional<fs::path> ui_dir;       // static files mounted at /
  std::string host = "127.0.0.1";
  int port = 8080;
  int default_top_m = 5;
  int box_samples = 7;
  int threads = 4;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class AnnotationService {
 public:
  // Loads the head, every feature map and any existing annotations.
  explicit AnnotationService(const ServiceOptions& opt);

  HttpResponse handle(std::string_view method, std::string_view path,
                      std::string_view body);

  const ServiceOptions& options() const { return opt_; }

 private:
  struct Image {
    ManifestEntry entry;
    PatchFeatureMap features;
  };

  HttpResponse list_images() const;
  HttpResponse preview(const std::string& id) const;
  HttpResponse predict(std::string_view body) const;
  HttpResponse add_annotation(std::string_view body);
  HttpResponse annotations(const std::string& id);

  const Image* find(const std::string& id) const;

  ServiceOptions opt_;
  LabelerHead head_;
  std::vector<std::string> class_names_;
  std::vector<Image> images_;  // manifest order
  std::map<std::string, std::size_t> index_;

  std::mutex mu_;  // guards annotations_ and the export file
  std::map<std::string, std::vector<std::string>> annotations_;  // JSON records
};

// HTTP front end for a service. bind() with port 0 picks a free port.
class HttpListener {
 public:
  explicit HttpListener(AnnotationService& service);
  ~HttpListener();
  HttpListener(const HttpListener&) = delete;
  HttpListener& operator=(const HttpListener&) = delete;

  // Returns the bound port; throws Error when binding fails.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called from another thread.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Binds to the configured host and port and blocks.
void serve(AnnotationService& service);

}  // namespace relabel

#endif  // RELABEL_SERVICE_HPP_
