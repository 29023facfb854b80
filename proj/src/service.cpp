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

#include "relabel/service.hpp"

#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace relabel {

namespace {

using nlohmann::json;

HttpResponse error(int status, std::string code, std::string message) {
  json j;
  j["code"] = std::move(code);
  j["message"] = std::move(message);
  return {status, "application/json", j.dump()};
}

HttpResponse ok(const json& j) { return {200, "application/json", j.dump()}; }

// Splits "/a/b/c" into {"a","b","c"}; trailing slashes are ignored.
std::vector<std::string> segments(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    const std::size_t j = std::min(path.find('/', i), path.size());
    out.emplace_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<Box> parse_box(const json& j) {
  if (!j.is_array() || j.size() != 4) return std::nullopt;
  for (const auto& v : j) {
    if (!v.is_number()) return std::nullopt;
  }
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
             j[3].get<double>()};
}

std::string mime_for(const fs::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".pgm") return "image/x-portable-graymap";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

}  // namespace

AnnotationService::AnnotationService(const ServiceOptions& opt)
    : opt_(opt), head_(load_head(opt.head)) {
  if (opt_.default_top_m < 1 || opt_.box_samples < 1) {
    throw DataError("serve: top_m and box samples must be positive");
  }
  const Manifest manifest = load_manifest(opt_.manifest);
  for (const auto& e : manifest.entries) {
    PatchFeatureMap f = load_feature_map(e.features);
    if (f.dim() != head_.dim()) {
      throw DataError(e.image_id + ": feature dim does not match the head");
    }
    index_[e.image_id] = images_.size();
    images_.push_back(Image{e, std::move(f)});
  }
  if (opt_.class_names) {
    class_names_ = read_class_names(*opt_.class_names);
    if (static_cast<int>(class_names_.size()) != head_.classes()) {
      throw DataError("serve: class-name count does not match the head");
    }
  } else {
    for (int c = 0; c < head_.classes(); ++c) {
      class_names_.push_back("class_" + std::to_string(c));
    }
  }
  if (fs::exists(opt_.annotations_out)) {
    std::istringstream in(read_file(opt_.annotations_out));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("image_id") || !j.contains("box") ||
          !j.contains("class")) {
        throw DataError(opt_.annotations_out.string() + ": malformed record");
      }
      json rec;
      rec["box"] = j["box"];
      rec["class"] = j["class"];
      annotations_[j["image_id"].get<std::string>()].push_back(rec.dump());
    }
  }
}

const AnnotationService::Image* AnnotationService::find(
    const std::string& id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &images_[it->second];
}

HttpResponse AnnotationService::handle(std::string_view method,
                                       std::string_view path,
                                       std::string_view body) {
  const auto seg = segments(path);
  try {
    if (seg.size() == 1 && seg[0] == "images") {
      if (method != "GET") return error(405, "method_not_allowed", "use GET");
      return list_images();
    }
    if (seg.size() == 3 && seg[0] == "images" && seg[2] == "preview") {
      if (method != "GET") return error(405, "method_not_allowed", "use GET");
      return preview(seg[1]);
    }
    if (seg.size() == 1 && seg[0] == "predict") {
      if (method != "POST") return error(405, "method_not_allowed", "use POST");
      return predict(body);
    }
    if (seg.size() == 1 && seg[0] == "annotations") {
      if (method != "POST") return error(405, "method_not_allowed", "use POST");
      return add_annotation(body);
    }
    if (seg.size() == 2 && seg[0] == "annotations") {
      if (method != "GET") return error(405, "method_not_allowed", "use GET");
      return annotations(seg[1]);
    }
  } catch (const DataError& e) {
    return error(400, "bad_request", e.what());
  }
  return error(404, "not_found", "no route for " + std::string(path));
}

HttpResponse AnnotationService::list_images() const {
  json list = json::array();
  for (const auto& img : images_) {
    list.push_back({{"image_id", img.entry.image_id},
                    {"height", img.entry.height},
                    {"width", img.entry.width},
                    {"has_preview", img.entry.preview.has_value()}});
  }
  return ok({{"images", list}});
}

HttpResponse AnnotationService::preview(const std::string& id) const {
  const Image* img = find(id);
  if (img == nullptr) return error(404, "unknown_image", "unknown image " + id);
  if (!img->entry.preview) {
    return error(404, "no_preview", "no preview for image " + id);
  }
  return {200, mime_for(*img->entry.preview), read_file(*img->entry.preview)};
}

HttpResponse AnnotationService::predict(std::string_view body) const {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return error(400, "bad_request", "body must be a JSON object");
  }
  if (!j.contains("image_id") || !j["image_id"].is_string()) {
    return error(400, "bad_request", "image_id must be a string");
  }
  const std::string id = j["image_id"].get<std::string>();
  const Image* img = find(id);
  if (img == nullptr) return error(404, "unknown_image", "unknown image " + id);
  const auto box = j.contains("box") ? parse_box(j["box"]) : std::nullopt;
  if (!box) return error(400, "bad_box", "box must be [x0, y0, x1, y1]");
  try {
    box->validate();
  } catch (const DataError& e) {
    return error(400, "bad_box", e.what());
  }
  int top_m = opt_.default_top_m;
  if (j.contains("top_m")) {
    if (!j["top_m"].is_number_integer() || j["top_m"].get<int>() < 1) {
      return error(400, "bad_request", "top_m must be a positive integer");
    }
    top_m = j["top_m"].get<int>();
  }
  const RegionPrediction p =
      predict_box(head_, img->features, *box, opt_.box_samples);
  json ranked = json::array();
  for (const auto& [c, score] : rank_classes(p.probs, top_m)) {
    ranked.push_back(json::array({class_names_[c], score}));
  }
  return ok({{"image_id", id}, {"box", j["box"]}, {"predictions", ranked}});
}

HttpResponse AnnotationService::add_annotation(std::string_view body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return error(400, "bad_request", "body must be a JSON object");
  }
  if (!j.contains("image_id") || !j["image_id"].is_string()) {
    return error(400, "bad_request", "image_id must be a string");
  }
  const std::string id = j["image_id"].get<std::string>();
  if (find(id) == nullptr) return error(404, "unknown_image", "unknown image " + id);
  const auto box = j.contains("box") ? parse_box(j["box"]) : std::nullopt;
  if (!box) return error(400, "bad_box", "box must be [x0, y0, x1, y1]");
  try {
    box->validate();
  } catch (const DataError& e) {
    return error(400, "bad_box", e.what());
  }
  std::string cls;
  if (j.contains("class") && j["class"].is_string()) {
    cls = j["class"].get<std::string>();
  } else if (j.contains("class") && j["class"].is_number_integer()) {
    const int c = j["class"].get<int>();
    if (c < 0 || c >= static_cast<int>(class_names_.size())) {
      return error(400, "unknown_class", "class id out of range");
    }
    cls = class_names_[c];
  } else {
    return error(400, "bad_request", "class must be a name or id");
  }
  if (std::find(class_names_.begin(), class_names_.end(), cls) ==
      class_names_.end()) {
    return error(400, "unknown_class", "unknown class " + cls);
  }

  json rec;
  rec["box"] = j["box"];
  rec["class"] = cls;
  json line = {{"image_id", id}, {"box", j["box"]}, {"class", cls}};
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (opt_.annotations_out.has_parent_path()) {
      fs::create_directories(opt_.annotations_out.parent_path());
    }
    std::ofstream out(opt_.annotations_out, std::ios::app | std::ios::binary);
    out << line.dump() << '\n';
    if (!out) {
      throw Error("cannot append to " + opt_.annotations_out.string());
    }
    annotations_[id].push_back(rec.dump());
  }
  return ok(line);
}

HttpResponse AnnotationService::annotations(const std::string& id) {
  if (find(id) == nullptr) return error(404, "unknown_image", "unknown image " + id);
  json list = json::array();
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (const auto it = annotations_.find(id); it != annotations_.end()) {
      for (const auto& s : it->second) list.push_back(json::parse(s));
    }
  }
  return ok({{"image_id", id}, {"annotations", list}});
}

struct HttpListener::Impl {
  httplib::Server server;
};

HttpListener::HttpListener(AnnotationService& service)
    : impl_(std::make_unique<Impl>()) {
  const ServiceOptions& opt = service.options();
  httplib::Server& server = impl_->server;
  server.new_task_queue = [n = opt.threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(std::max(1, n)));
  };
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(R"(/images(/.*)?)", route);
  server.Get(R"(/annotations/.*)", route);
  server.Post("/predict", route);
  server.Post("/annotations", route);
  if (opt.ui_dir && !server.set_mount_point("/", opt.ui_dir->string())) {
    throw DataError("serve: cannot mount " + opt.ui_dir->string());
  }
}

HttpListener::~HttpListener() = default;

int HttpListener::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error("serve: cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void HttpListener::run() { impl_->server.listen_after_bind(); }

void HttpListener::stop() { impl_->server.stop(); }

void serve(AnnotationService& service) {
  HttpListener listener(service);
  listener.bind(service.options().host, service.options().port);
  listener.run();
}

}  // namespace relabel
