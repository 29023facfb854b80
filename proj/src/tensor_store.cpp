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

#include "relabel/tensor_store.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "TensorFile I/O assumes a little-endian host");

namespace relabel {

namespace {

constexpr std::array<char, 4> kMagic = {'R', 'L', 'T', 'F'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<std::size_t>(in.gcount()) == sizeof(T);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view s, const char* what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(std::string("malformed ") + what + ": '" +
                    std::string(s) + "'");
  }
  return v;
}

const Tensor& expect(const std::vector<Tensor>& b, std::size_t i, DType t,
                     std::size_t ndim, const char* what) {
  if (i >= b.size() || b[i].dtype != t || b[i].shape.size() != ndim) {
    throw DataError(std::string("unexpected bundle layout for ") + what);
  }
  return b[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// TensorFile

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
    case DType::I32:
      return 4;
    case DType::U8:
      return 1;
  }
  throw DataError("unknown dtype");
}

std::uint64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         std::multiplies<>());
}

Tensor Tensor::from_f32(std::vector<std::uint64_t> shape,
                        std::span<const float> values) {
  Tensor t{DType::F32, std::move(shape), {}};
  if (t.element_count() != values.size()) {
    throw DataError("tensor shape does not match value count");
  }
  t.payload.resize(values.size_bytes());
  std::memcpy(t.payload.data(), values.data(), values.size_bytes());
  return t;
}

Tensor Tensor::from_i32(std::vector<std::uint64_t> shape,
                        std::span<const std::int32_t> values) {
  Tensor t{DType::I32, std::move(shape), {}};
  if (t.element_count() != values.size()) {
    throw DataError("tensor shape does not match value count");
  }
  t.payload.resize(values.size_bytes());
  std::memcpy(t.payload.data(), values.data(), values.size_bytes());
  return t;
}

Tensor Tensor::from_text(std::string_view text) {
  Tensor t{DType::U8, {text.size()}, {}};
  t.payload.resize(text.size());
  std::memcpy(t.payload.data(), text.data(), text.size());
  return t;
}

std::vector<float> Tensor::to_f32() const {
  if (dtype != DType::F32) throw DataError("tensor is not f32");
  std::vector<float> v(payload.size() / 4);
  std::memcpy(v.data(), payload.data(), payload.size());
  return v;
}

std::vector<std::int32_t> Tensor::to_i32() const {
  if (dtype != DType::I32) throw DataError("tensor is not i32");
  std::vector<std::int32_t> v(payload.size() / 4);
  std::memcpy(v.data(), payload.data(), payload.size());
  return v;
}

std::string Tensor::to_text() const {
  if (dtype != DType::U8) throw DataError("tensor is not text");
  return std::string(reinterpret_cast<const char*>(payload.data()),
                     payload.size());
}

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.shape.size() > 255) throw DataError("tensor rank exceeds 255");
  if (t.payload.size() != t.element_count() * dtype_size(t.dtype)) {
    throw DataError("tensor payload size does not match shape");
  }
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (std::uint64_t d : t.shape) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.payload.data()),
            static_cast<std::streamsize>(t.payload.size()));
}

std::optional<Tensor> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() == 0) return std::nullopt;
  if (in.gcount() != 4 || magic != kMagic) {
    throw DataError("TensorFile: bad magic");
  }
  std::uint32_t version = 0;
  std::uint8_t dtype = 0;
  std::uint8_t ndim = 0;
  if (!get(in, version) || !get(in, dtype) || !get(in, ndim)) {
    throw DataError("TensorFile: truncated header");
  }
  if (version != kTensorFileVersion) {
    throw DataError("TensorFile: unsupported version " +
                    std::to_string(version));
  }
  if (dtype > static_cast<std::uint8_t>(DType::U8)) {
    throw DataError("TensorFile: unknown dtype code");
  }
  Tensor t;
  t.dtype = static_cast<DType>(dtype);
  t.shape.resize(ndim);
  for (auto& d : t.shape) {
    if (!get(in, d)) throw DataError("TensorFile: truncated shape");
  }
  const std::uint64_t bytes = t.element_count() * dtype_size(t.dtype);
  if (bytes > (std::uint64_t{1} << 40)) {
    throw DataError("TensorFile: implausible payload size");
  }
  t.payload.resize(bytes);
  in.read(reinterpret_cast<char*>(t.payload.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::uint64_t>(in.gcount()) != bytes) {
    throw DataError("TensorFile: truncated payload");
  }
  return t;
}

void write_bundle(const std::filesystem::path& path,
                  std::span<const Tensor> tensors) {
  std::ostringstream out(std::ios::binary);
  for (const auto& t : tensors) write_tensor(out, t);
  write_file(path, out.str());
}

std::vector<Tensor> read_bundle(const std::filesystem::path& path) {
  std::istringstream in(read_file(path), std::ios::binary);
  std::vector<Tensor> out;
  try {
    while (auto t = read_tensor(in)) out.push_back(std::move(*t));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature maps

void PatchFeatureMap::validate() const {
  if (grid_h < 2 || grid_w < 2) {
    throw DataError("feature map " + image_id + ": grid must be at least 2x2");
  }
  if (features.rows() != static_cast<Eigen::Index>(grid_h) * grid_w ||
      features.cols() < 1) {
    throw DataError("feature map " + image_id + ": shape mismatch");
  }
  if (!features.allFinite()) {
    throw DataError("feature map " + image_id + ": non-finite entries");
  }
}

void save_feature_map(const std::filesystem::path& path,
                      const PatchFeatureMap& fmap) {
  fmap.validate();
  const std::vector<Tensor> bundle = {
      Tensor::from_text(fmap.image_id),
      Tensor::from_text(fmap.source_tag),
      Tensor::from_f32({static_cast<std::uint64_t>(fmap.grid_h),
                        static_cast<std::uint64_t>(fmap.grid_w),
                        static_cast<std::uint64_t>(fmap.dim())},
                       {fmap.features.data(),
                        static_cast<std::size_t>(fmap.features.size())})};
  write_bundle(path, bundle);
}

PatchFeatureMap load_feature_map(const std::filesystem::path& path) {
  const auto b = read_bundle(path);
  PatchFeatureMap fmap;
  fmap.image_id = expect(b, 0, DType::U8, 1, "feature map").to_text();
  fmap.source_tag = expect(b, 1, DType::U8, 1, "feature map").to_text();
  const Tensor& data = expect(b, 2, DType::F32, 3, "feature map");
  fmap.grid_h = static_cast<int>(data.shape[0]);
  fmap.grid_w = static_cast<int>(data.shape[1]);
  const auto values = data.to_f32();
  fmap.features = Eigen::Map<const RowMatrix<float>>(
      values.data(), static_cast<Eigen::Index>(data.shape[0] * data.shape[1]),
      static_cast<Eigen::Index>(data.shape[2]));
  fmap.validate();
  return fmap;
}

// ---------------------------------------------------------------------------
// Logit maps

void LogitMap::validate() const {
  if (cell_h < 1 || cell_w < 1 || k < 0 || class_count < 1) {
    throw DataError("logit map " + image_id + ": bad dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(cell_count()) * k;
  if (indices.size() != n || logits.size() != n) {
    throw DataError("logit map " + image_id + ": payload size mismatch");
  }
  for (int cell = 0; cell < cell_count(); ++cell) {
    for (int j = 0; j < k; ++j) {
      const std::size_t at = static_cast<std::size_t>(cell) * k + j;
      if (indices[at] < 0 || indices[at] >= class_count) {
        throw DataError("logit map " + image_id + ": class index out of range");
      }
      if (!std::isfinite(logits[at])) {
        throw DataError("logit map " + image_id + ": non-finite logit");
      }
      for (int i = 0; i < j; ++i) {
        if (indices[static_cast<std::size_t>(cell) * k + i] == indices[at]) {
          throw DataError("logit map " + image_id +
                          ": duplicate class index within a cell");
        }
      }
    }
  }
}

void save_logit_map(const std::filesystem::path& path, const LogitMap& lm) {
  lm.validate();
  const std::vector<std::uint64_t> shape = {
      static_cast<std::uint64_t>(lm.cell_h),
      static_cast<std::uint64_t>(lm.cell_w), static_cast<std::uint64_t>(lm.k)};
  const std::int32_t classes = lm.class_count;
  const std::vector<Tensor> bundle = {
      Tensor::from_text(lm.image_id), Tensor::from_i32(shape, lm.indices),
      Tensor::from_f32(shape, lm.logits),
      Tensor::from_i32({1}, std::span<const std::int32_t>(&classes, 1))};
  write_bundle(path, bundle);
}

LogitMap load_logit_map(const std::filesystem::path& path) {
  const auto b = read_bundle(path);
  LogitMap lm;
  lm.image_id = expect(b, 0, DType::U8, 1, "logit map").to_text();
  const Tensor& idx = expect(b, 1, DType::I32, 3, "logit map");
  const Tensor& val = expect(b, 2, DType::F32, 3, "logit map");
  const Tensor& cls = expect(b, 3, DType::I32, 1, "logit map");
  if (idx.shape != val.shape || cls.element_count() != 1) {
    throw DataError(path.string() + ": inconsistent logit map tensors");
  }
  lm.cell_h = static_cast<int>(idx.shape[0]);
  lm.cell_w = static_cast<int>(idx.shape[1]);
  lm.k = static_cast<int>(idx.shape[2]);
  lm.indices = idx.to_i32();
  lm.logits = val.to_f32();
  lm.class_count = cls.to_i32()[0];
  lm.validate();
  return lm;
}

RowMatrix<float> densify_logits(const LogitMap& lm) {
  lm.validate();
  RowMatrix<float> dense = RowMatrix<float>::Zero(lm.cell_count(),
                                                  lm.class_count);
  for (int cell = 0; cell < lm.cell_count(); ++cell) {
    for (int j = 0; j < lm.k; ++j) {
      const std::size_t at = static_cast<std::size_t>(cell) * lm.k + j;
      dense(cell, lm.indices[at]) = lm.logits[at];
    }
  }
  return dense;
}

LogitMap sparsify_logits(std::string image_id, const RowMatrix<float>& dense,
                         int cell_h, int cell_w, int k) {
  if (dense.rows() != static_cast<Eigen::Index>(cell_h) * cell_w) {
    throw DataError("sparsify_logits: row count does not match cell grid");
  }
  if (k < 0 || k > dense.cols()) {
    throw DataError("sparsify_logits: k out of range");
  }
  LogitMap lm;
  lm.image_id = std::move(image_id);
  lm.cell_h = cell_h;
  lm.cell_w = cell_w;
  lm.k = k;
  lm.class_count = static_cast<int>(dense.cols());
  std::vector<std::int32_t> order(dense.cols());
  for (Eigen::Index cell = 0; cell < dense.rows(); ++cell) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::int32_t a, std::int32_t b) {
                        const float va = dense(cell, a);
                        const float vb = dense(cell, b);
                        return va > vb || (va == vb && a < b);
                      });
    for (int j = 0; j < k; ++j) {
      lm.indices.push_back(order[j]);
      lm.logits.push_back(dense(cell, order[j]));
    }
  }
  return lm;
}

// ---------------------------------------------------------------------------
// Mask projection

Mask project_mask(const Mask& pixel_mask, int grid_h, int grid_w) {
  const auto h = static_cast<int>(pixel_mask.rows());
  const auto w = static_cast<int>(pixel_mask.cols());
  if (grid_h < 1 || grid_w < 1 || h < grid_h || w < grid_w) {
    throw DataError("project_mask: pixel mask smaller than patch grid");
  }
  Mask out = Mask::Zero(grid_h, grid_w);
  for (int r = 0; r < grid_h; ++r) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(r) * h / grid_h);
    const int y1 =
        static_cast<int>(static_cast<std::int64_t>(r + 1) * h / grid_h);
    for (int c = 0; c < grid_w; ++c) {
      const int x0 =
          static_cast<int>(static_cast<std::int64_t>(c) * w / grid_w);
      const int x1 =
          static_cast<int>(static_cast<std::int64_t>(c + 1) * w / grid_w);
      const auto block = pixel_mask.block(y0, x0, y1 - y0, x1 - x0);
      const Eigen::Index fg = (block != 0).count();
      if (2 * fg >= block.size()) out(r, c) = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// RLE

RleMask rle_encode(const Mask& mask) {
  RleMask rle{static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const std::uint8_t v = mask.data()[i] != 0 ? 1 : 0;
    if (v != current) {
      rle.runs.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  if (run > 0 || rle.runs.empty()) rle.runs.push_back(run);
  return rle;
}

Mask rle_decode(const RleMask& rle) {
  if (rle.height < 0 || rle.width < 0) throw DataError("RLE: negative size");
  const std::uint64_t total =
      static_cast<std::uint64_t>(rle.height) * static_cast<std::uint64_t>(rle.width);
  if (rle.runs.empty()) throw DataError("RLE: empty run list");
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < rle.runs.size(); ++i) {
    if (i > 0 && rle.runs[i] == 0) {
      throw DataError("RLE: zero-length run after the first");
    }
    sum += rle.runs[i];
  }
  if (sum != total) throw DataError("RLE: run lengths do not cover the mask");
  Mask m(rle.height, rle.width);
  std::uint8_t value = 0;
  std::uint64_t pos = 0;
  for (std::uint32_t run : rle.runs) {
    std::fill_n(m.data() + pos, run, value);
    pos += run;
    value ^= 1;
  }
  return m;
}

std::string to_string(const RleMask& rle) {
  std::string s = std::to_string(rle.height) + "x" + std::to_string(rle.width) + ":";
  for (std::size_t i = 0; i < rle.runs.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(rle.runs[i]);
  }
  return s;
}

RleMask parse_rle(std::string_view text) {
  const std::size_t x = text.find('x');
  const std::size_t colon = text.find(':');
  if (x == std::string_view::npos || colon == std::string_view::npos ||
      x > colon) {
    throw DataError("RLE: expected 'HxW:runs'");
  }
  RleMask rle;
  rle.height = parse_number<int>(text.substr(0, x), "RLE height");
  rle.width = parse_number<int>(text.substr(x + 1, colon - x - 1), "RLE width");
  const std::string_view body = text.substr(colon + 1);
  if (body.empty()) throw DataError("RLE: empty run list");
  for (std::string_view tok : split(body, ',')) {
    rle.runs.push_back(parse_number<std::uint32_t>(tok, "RLE run"));
  }
  rle_decode(rle);  // validates
  return rle;
}

// ---------------------------------------------------------------------------
// Proposals

void write_proposals(const std::filesystem::path& path,
                     std::span<const MaskProposal> proposals) {
  std::string out = "# image_id\tconfig_id\titeration\tpatch_rle\tpixel_rle\n";
  for (const auto& p : proposals) {
    out += p.image_id + '\t' + p.config_id + '\t' +
           std::to_string(p.iteration_index) + '\t' +
           to_string(rle_encode(p.patch_mask)) + '\t' +
           (p.pixel_mask ? to_string(rle_encode(*p.pixel_mask)) : "-") + '\n';
  }
  write_file(path, out);
}

std::vector<MaskProposal> read_proposals(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<MaskProposal> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 5) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected 5 fields");
    }
    MaskProposal p;
    p.image_id = std::string(f[0]);
    p.config_id = std::string(f[1]);
    p.iteration_index = parse_number<int>(f[2], "iteration index");
    p.patch_mask = rle_decode(parse_rle(f[3]));
    if (f[4] != "-") p.pixel_mask = rle_decode(parse_rle(f[4]));
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label sets

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::LocalHard:
      return "LocalHard";
    case Strategy::LocalSoft:
      return "LocalSoft";
    case Strategy::PlusOriginal:
      return "PlusOriginal";
    case Strategy::PlusPred:
      return "PlusPred";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "LocalHard") return Strategy::LocalHard;
  if (s == "LocalSoft") return Strategy::LocalSoft;
  if (s == "PlusOriginal") return Strategy::PlusOriginal;
  if (s == "PlusPred") return Strategy::PlusPred;
  throw DataError("unknown strategy tag '" + std::string(s) + "'");
}

const Grounding* ImageLabelSet::grounding_for(int class_id) const {
  for (const auto& g : groundings) {
    if (g.class_id == class_id) return &g;
  }
  return nullptr;
}

Grounding* ImageLabelSet::grounding_for(int class_id) {
  for (auto& g : groundings) {
    if (g.class_id == class_id) return &g;
  }
  return nullptr;
}

void ImageLabelSet::sort_groundings() {
  std::sort(groundings.begin(), groundings.end(),
            [](const Grounding& a, const Grounding& b) {
              return a.class_id < b.class_id;
            });
}

bool operator==(const ImageLabelSet& a, const ImageLabelSet& b) {
  return a.image_id == b.image_id && a.soft.size() == b.soft.size() &&
         a.soft == b.soft && a.hard == b.hard && a.groundings == b.groundings &&
         a.strategy == b.strategy;
}

std::string to_json_line(const ImageLabelSet& labels) {
  nlohmann::json j;
  j["image_id"] = labels.image_id;
  j["strategy"] = to_string(labels.strategy);
  j["num_classes"] = labels.class_count();
  nlohmann::json pairs = nlohmann::json::array();
  for (Eigen::Index c = 0; c < labels.soft.size(); ++c) {
    if (labels.soft(c) != 0.0) pairs.push_back({c, labels.soft(c)});
  }
  j["labels"] = pairs;
  if (labels.hard) {
    nlohmann::json hard = nlohmann::json::array();
    for (std::size_t c = 0; c < labels.hard->size(); ++c) {
      if ((*labels.hard)[c]) hard.push_back(c);
    }
    j["hard"] = hard;
  }
  nlohmann::json gs = nlohmann::json::array();
  for (const auto& g : labels.groundings) {
    nlohmann::json e;
    e["class"] = g.class_id;
    e["confidence"] = g.confidence;
    if (g.mask) {
      e["config_id"] = g.mask->config_id;
      e["iteration"] = g.mask->iteration_index;
    }
    if (g.rle) e["rle"] = to_string(*g.rle);
    gs.push_back(e);
  }
  j["groundings"] = gs;
  return j.dump();
}

ImageLabelSet parse_json_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    ImageLabelSet out;
    out.image_id = j.at("image_id").get<std::string>();
    out.strategy = parse_strategy(j.at("strategy").get<std::string>());
    const int k = j.at("num_classes").get<int>();
    if (k < 0) throw DataError("negative class count");
    out.soft = Eigen::VectorXd::Zero(k);
    for (const auto& p : j.at("labels")) {
      const int c = p.at(0).get<int>();
      const double v = p.at(1).get<double>();
      if (c < 0 || c >= k) throw DataError("label class out of range");
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("label score outside [0,1]");
      out.soft(c) = v;
    }
    if (j.contains("hard")) {
      std::vector<std::uint8_t> hard(k, 0);
      for (const auto& c : j.at("hard")) {
        const int id = c.get<int>();
        if (id < 0 || id >= k) throw DataError("hard class out of range");
        hard[id] = 1;
      }
      out.hard = std::move(hard);
    }
    for (const auto& e : j.at("groundings")) {
      Grounding g;
      g.class_id = e.at("class").get<int>();
      g.confidence = e.at("confidence").get<double>();
      if (e.contains("config_id")) {
        g.mask = MaskRef{e.at("config_id").get<std::string>(),
                         e.at("iteration").get<int>()};
      }
      if (e.contains("rle")) g.rle = parse_rle(e.at("rle").get<std::string>());
      out.groundings.push_back(std::move(g));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed annotation record: ") + e.what());
  }
}

void write_sidecar(const std::filesystem::path& path,
                   std::span<const ImageLabelSet> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json_line(r);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<ImageLabelSet> read_sidecar(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<ImageLabelSet> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_json_line(line));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace relabel
