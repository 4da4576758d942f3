// Copyright 2026 The safe-cf Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "safe/errors.hpp"
#include "safe/image_io.hpp"

namespace safe {
namespace {

using nlohmann::json;
namespace F = torch::nn::functional;

constexpr float kGreen[3] = {0.15f, 0.75f, 0.20f};
constexpr float kRed[3] = {0.80f, 0.12f, 0.12f};

std::string zero_padded(std::int64_t i, int width = 5) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*lld", width, static_cast<long long>(i));
  return buf;
}

// Smooth noise: a coarse uniform grid upsampled bilinearly to full size.
torch::Tensor low_frequency_noise(std::mt19937_64& rng, std::int64_t channels, std::int64_t h,
                                  std::int64_t w, std::int64_t cells) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto coarse = torch::empty({1, channels, cells, cells});
  auto* p = coarse.data_ptr<float>();
  for (std::int64_t i = 0; i < coarse.numel(); ++i) p[i] = u(rng);
  return F::interpolate(coarse, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{h, w})
                                    .mode(torch::kBilinear)
                                    .align_corners(true))
      .squeeze(0);
}

torch::Tensor quantize(const torch::Tensor& t) {
  return t.clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

}  // namespace

torch::Tensor disc_rgb(DiscColor color) {
  const float* c = color == DiscColor::Green ? kGreen : kRed;
  return torch::tensor({c[0], c[1], c[2]});
}

std::vector<ToyScene> make_toy_scenes(const ToyDatasetOptions& options) {
  if (options.n < 1) throw ConfigError("toy dataset size must be >= 1");
  if (options.radius_min <= 0 || options.radius_max < options.radius_min) {
    throw ConfigError("invalid disc radius range");
  }
  const auto h = options.height;
  const auto w = options.width;
  if (2 * options.radius_max + 2 > static_cast<double>(std::min(h, w))) {
    throw ConfigError("disc radius does not fit in a " + std::to_string(h) + "x" +
                      std::to_string(w) + " frame");
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto rows = torch::arange(h, torch::kFloat).view({h, 1}).expand({h, w});
  auto cols = torch::arange(w, torch::kFloat).view({1, w}).expand({h, w});

  std::vector<ToyScene> scenes;
  scenes.reserve(static_cast<std::size_t>(options.n));
  for (std::int64_t i = 0; i < options.n; ++i) {
    ToyScene scene;
    scene.color = (i % 2 == 0) ? DiscColor::Green : DiscColor::Red;
    scene.label = label_for_color(scene.color);

    // Horizon gradient: bluish-grey sky fading down to a brownish-grey road.
    const double horizon = (0.35 + 0.25 * unit(rng)) * static_cast<double>(h);
    const double sky_tint = 0.1 * (unit(rng) - 0.5);
    auto t = ((rows - static_cast<float>(horizon)) / 4.0f).sigmoid();
    auto sky = torch::tensor({0.55f, 0.60f, 0.72f}).add(sky_tint).view({3, 1, 1});
    auto road = torch::tensor({0.42f, 0.39f, 0.36f}).add(0.1 * (unit(rng) - 0.5)).view({3, 1, 1});
    auto ramp = (1.0f - rows / static_cast<float>(h) * 0.3f).unsqueeze(0);
    auto background = (sky * (1 - t) + road * t) * ramp;
    background = background + 0.07f * low_frequency_noise(rng, 3, h, w, 5) +
                 0.03f * low_frequency_noise(rng, 1, h, w, 12);

    scene.radius = options.radius_min + (options.radius_max - options.radius_min) * unit(rng);
    const auto margin = static_cast<std::int64_t>(std::ceil(scene.radius)) + 1;
    std::uniform_int_distribution<std::int64_t> row_dist(margin, h - 1 - margin);
    std::uniform_int_distribution<std::int64_t> col_dist(margin, w - 1 - margin);
    scene.center_row = row_dist(rng);
    scene.center_col = col_dist(rng);

    auto dist2 = (rows - static_cast<float>(scene.center_row)).square() +
                 (cols - static_cast<float>(scene.center_col)).square();
    scene.mask = (dist2 <= static_cast<float>(scene.radius * scene.radius)).to(torch::kFloat);

    auto jitter = torch::tensor({static_cast<float>(0.1 * (unit(rng) - 0.5)),
                                 static_cast<float>(0.1 * (unit(rng) - 0.5)),
                                 static_cast<float>(0.1 * (unit(rng) - 0.5))});
    auto disc = (disc_rgb(scene.color) + jitter).view({3, 1, 1}).expand({3, h, w});
    auto m = scene.mask.unsqueeze(0);
    scene.image = quantize(background * (1 - m) + disc * m).contiguous();
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

DiscColor disc_color_from_pixels(const torch::Tensor& image, const torch::Tensor& mask) {
  auto m = mask.to(torch::kFloat);
  const double count = m.sum().item<double>();
  if (count <= 0) throw InvalidRequest("empty disc mask");
  const double red = (image[0] * m).sum().item<double>() / count;
  const double green = (image[1] * m).sum().item<double>() / count;
  return green > red ? DiscColor::Green : DiscColor::Red;
}

torch::Tensor dilate_mask(const torch::Tensor& mask, int pixels) {
  if (pixels <= 0) return mask.to(torch::kFloat);
  auto m = mask.to(torch::kFloat).view({1, 1, mask.size(-2), mask.size(-1)});
  auto grown = F::max_pool2d(m, F::MaxPool2dFuncOptions(2 * pixels + 1).stride(1).padding(pixels));
  return grown.view({mask.size(-2), mask.size(-1)});
}

// ---------------------------------------------------------------------------

std::optional<std::filesystem::path> DatasetManifest::mask_path(std::size_t i) const {
  if (!entries[i].mask) return std::nullopt;
  return directory / *entries[i].mask;
}

DatasetManifest generate_toy_dataset(const ToyDatasetOptions& options,
                                     const std::filesystem::path& root, const std::string& split) {
  const auto scenes = make_toy_scenes(options);
  const auto dir = root / split;
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.split = split;
  manifest.directory = dir;
  manifest.image_shape = {3, options.height, options.width};
  manifest.class_names = {"GO", "STOP"};
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto id = zero_padded(static_cast<std::int64_t>(i));
    ManifestEntry entry{id, "images/" + id + ".png", scenes[i].label, "masks/" + id + ".png"};
    write_png(dir / entry.image, scenes[i].image);
    write_png(dir / *entry.mask, scenes[i].mask);
    manifest.entries.push_back(std::move(entry));
  }
  write_manifest(manifest, dir / "manifest.json");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["split"] = manifest.split;
  j["image_size"] = {manifest.image_shape.height, manifest.image_shape.width};
  j["channels"] = manifest.image_shape.channels;
  j["class_names"] = manifest.class_names;
  j["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json item{{"id", e.id}, {"image", e.image}};
    if (e.label) item["label"] = *e.label;
    if (e.mask) item["mask"] = *e.mask;
    j["entries"].push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }

  DatasetManifest m;
  try {
    m.directory = path.parent_path();
    m.split = j.value("split", std::string("unnamed"));
    const auto size = j.at("image_size").get<std::vector<std::int64_t>>();
    if (size.size() != 2) throw ConfigError("image_size must be [H, W]");
    m.image_shape = {j.value("channels", std::int64_t{3}), size[0], size[1]};
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& item : j.at("entries")) {
      ManifestEntry e;
      e.image = item.at("image").get<std::string>();
      e.id = item.value("id", std::filesystem::path(e.image).stem().string());
      if (item.contains("label")) e.label = item.at("label").get<LabelId>();
      if (item.contains("mask")) e.mask = item.at("mask").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError("invalid manifest " + path.string() + ": " + e.what());
  }
  if (m.class_names.size() < 2) throw ConfigError("manifest needs at least two class names");
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (!std::filesystem::exists(m.image_path(i))) {
      throw IoError("missing image " + m.image_path(i).string());
    }
    if (auto mp = m.mask_path(i); mp && !std::filesystem::exists(*mp)) {
      throw IoError("missing mask " + mp->string());
    }
    if (auto l = m.entries[i].label; l && (*l < 0 || *l >= m.num_classes())) {
      throw ConfigError("label " + std::to_string(*l) + " out of range in " + path.string());
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

Dataset Dataset::subset(const std::vector<std::int64_t>& indices) const {
  Dataset out;
  out.class_names = class_names;
  auto idx = torch::tensor(indices, torch::kLong);
  out.images = images.index_select(0, idx);
  if (labels.defined()) out.labels = labels.index_select(0, idx);
  if (masks.defined()) out.masks = masks.index_select(0, idx);
  for (auto i : indices) out.ids.push_back(ids[static_cast<std::size_t>(i)]);
  return out;
}

Dataset to_dataset(const std::vector<ToyScene>& scenes) {
  if (scenes.empty()) throw ConfigError("empty scene list");
  Dataset d;
  d.class_names = {"GO", "STOP"};
  std::vector<torch::Tensor> images, masks;
  std::vector<std::int64_t> labels;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    d.ids.push_back(zero_padded(static_cast<std::int64_t>(i)));
    images.push_back(scenes[i].image);
    masks.push_back(scenes[i].mask);
    labels.push_back(scenes[i].label);
  }
  d.images = torch::stack(images);
  d.masks = torch::stack(masks);
  d.labels = torch::tensor(labels, torch::kLong);
  return d;
}

namespace {

torch::Tensor decode_entry(const DatasetManifest& m, std::size_t i, const ImageShape& shape) {
  try {
    auto img = read_png(m.image_path(i), static_cast<int>(shape.channels));
    return resize_image(img, shape.height, shape.width);
  } catch (const IoError& e) {
    throw IoError(std::string("failed to decode ") + m.image_path(i).string() + ": " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const DatasetManifest& manifest, std::optional<ImageShape> shape) {
  if (manifest.entries.empty()) throw ConfigError("manifest has no entries");
  const ImageShape target = shape.value_or(manifest.image_shape);
  Dataset d;
  d.class_names = manifest.class_names;
  std::vector<torch::Tensor> images, masks;
  std::vector<std::int64_t> labels;
  bool all_labels = true;
  bool all_masks = true;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    d.ids.push_back(e.id);
    images.push_back(decode_entry(manifest, i, target));
    if (e.label) labels.push_back(*e.label); else all_labels = false;
    if (auto mp = manifest.mask_path(i)) {
      auto mask = resize_image(read_png(*mp, 1), target.height, target.width).squeeze(0);
      masks.push_back((mask > 0.5).to(torch::kFloat));
    } else {
      all_masks = false;
    }
  }
  d.images = torch::stack(images);
  if (all_labels) d.labels = torch::tensor(labels, torch::kLong);
  if (all_masks) d.masks = torch::stack(masks);
  return d;
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::mt19937_64& rng, bool shuffle) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchIterator::BatchIterator(DatasetManifest manifest, std::int64_t batch_size, std::uint64_t seed,
                             bool shuffle, ImageShape shape)
    : manifest_(std::move(manifest)), batch_size_(batch_size), shape_(shape) {
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  std::mt19937_64 rng(seed);
  order_ = epoch_order(static_cast<std::int64_t>(manifest_.entries.size()), rng, shuffle);
}

std::int64_t BatchIterator::num_batches() const {
  const auto n = static_cast<std::int64_t>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

void BatchIterator::reset() { cursor_ = 0; }

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const auto end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  Batch batch;
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  bool labelled = true;
  for (auto k = cursor_; k < end; ++k) {
    const auto i = static_cast<std::size_t>(order_[k]);
    batch.indices.push_back(order_[k]);
    batch.ids.push_back(manifest_.entries[i].id);
    images.push_back(decode_entry(manifest_, i, shape_));
    if (manifest_.entries[i].label) labels.push_back(*manifest_.entries[i].label); else labelled = false;
  }
  cursor_ = end;
  batch.images = torch::stack(images);
  if (labelled) batch.labels = torch::tensor(labels, torch::kLong);
  return batch;
}

BatchIterator load_batches(const DatasetManifest& manifest, std::int64_t batch_size,
                           std::uint64_t seed, bool shuffle, std::optional<ImageShape> shape) {
  return BatchIterator(manifest, batch_size, seed, shuffle, shape.value_or(manifest.image_shape));
}

// ---------------------------------------------------------------------------

torch::Tensor change_map(const torch::Tensor& query, const torch::Tensor& counterfactual) {
  if (!query.sizes().equals(counterfactual.sizes())) {
    throw ShapeError("change_map: query " + shape_string(query.sizes()) + " vs counterfactual " +
                     shape_string(counterfactual.sizes()));
  }
  return std::get<0>((query.detach() - counterfactual.detach()).abs().max(0));
}

torch::Tensor render_grid(const std::vector<GridRow>& rows) {
  if (rows.empty()) throw ShapeError("render_grid: no rows");
  const auto h = rows[0].query.size(1);
  const auto w = rows[0].query.size(2);
  constexpr std::int64_t panels = 4;
  const auto pad = kGridPadding;
  const auto rows_n = static_cast<std::int64_t>(rows.size());
  auto canvas = torch::ones({3, rows_n * h + (rows_n + 1) * pad, panels * w + (panels + 1) * pad});
  for (std::int64_t r = 0; r < rows_n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (const auto& t : {row.query, row.counterfactual}) {
      if (t.dim() != 3 || t.size(0) != rows[0].query.size(0) || t.size(1) != h || t.size(2) != w) {
        throw ShapeError("render_grid: panel shape " + shape_string(t.sizes()) + " differs from " +
                         shape_string(rows[0].query.sizes()));
      }
    }
    auto sal = row.saliency.dim() == 3 ? row.saliency.squeeze(0) : row.saliency;
    if (sal.size(0) != h || sal.size(1) != w) {
      throw ShapeError("render_grid: saliency shape " + shape_string(sal.sizes()));
    }
    const std::array<torch::Tensor, panels> tiles = {
        to_rgb(row.query), overlay(row.query, sal), to_rgb(row.counterfactual),
        heatmap(change_map(row.query, row.counterfactual))};
    const auto top = pad + r * (h + pad);
    for (std::int64_t p = 0; p < panels; ++p) {
      const auto left = pad + p * (w + pad);
      canvas.slice(1, top, top + h).slice(2, left, left + w).copy_(tiles[static_cast<std::size_t>(p)]);
    }
  }
  return canvas;
}

void save_grid(const std::vector<GridRow>& rows, const std::filesystem::path& path) {
  write_png(path, render_grid(rows));
}

}  // namespace safe
