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

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "safe/tensor_utils.hpp"

namespace safe {

// ---------------------------------------------------------------------------
// Toy traffic-light scenes
// ---------------------------------------------------------------------------

inline constexpr LabelId kGo = 0;
inline constexpr LabelId kStop = 1;

enum class DiscColor { Green, Red };

/// GO iff the disc is green.
constexpr LabelId label_for_color(DiscColor c) { return c == DiscColor::Green ? kGo : kStop; }

/// A synthetic scene: a textured road-like background with one coloured disc.
/// The disc is the only decision-relevant region, and `mask` marks exactly its
/// pixels.
struct ToyScene {
  torch::Tensor image;  // (3, H, W)
  torch::Tensor mask;   // (H, W), 1 on disc pixels
  std::int64_t center_row = 0;
  std::int64_t center_col = 0;
  double radius = 0.0;
  DiscColor color = DiscColor::Green;
  LabelId label = kGo;
};

struct ToyDatasetOptions {
  std::int64_t n = 1000;
  std::uint64_t seed = 0;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double radius_min = 6.0;
  double radius_max = 10.0;
};

/// Deterministic in `options.seed`. Classes alternate, so counts differ by at
/// most one.
std::vector<ToyScene> make_toy_scenes(const ToyDatasetOptions& options);

/// Nominal disc colours, exposed so callers can repaint a disc.
torch::Tensor disc_rgb(DiscColor color);

/// Recovers the disc colour from the pixels under `mask` (green channel
/// dominant means green).
DiscColor disc_color_from_pixels(const torch::Tensor& image, const torch::Tensor& mask);

/// Ground-truth mask grown by `pixels` in the chessboard metric.
torch::Tensor dilate_mask(const torch::Tensor& mask, int pixels);

// ---------------------------------------------------------------------------
// Manifests and loading
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::optional<LabelId> label;
  std::optional<std::string> mask;
};

/// JSON manifest of one split. Layout on disk is
/// `<root>/<split>/{images,masks}/` with `manifest.json` in `<root>/<split>/`.
struct DatasetManifest {
  std::string split;
  std::filesystem::path directory;
  ImageShape image_shape;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  std::filesystem::path image_path(std::size_t i) const { return directory / entries[i].image; }
  std::optional<std::filesystem::path> mask_path(std::size_t i) const;
  std::int64_t num_classes() const { return static_cast<std::int64_t>(class_names.size()); }
};

/// Writes images, masks and the manifest. Throws IoError when the output
/// directory is not writable.
DatasetManifest generate_toy_dataset(const ToyDatasetOptions& options,
                                     const std::filesystem::path& root, const std::string& split);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Parses and validates a manifest: every referenced file must exist and
/// labels must be valid class indices.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Decoded dataset held in memory.
struct Dataset {
  std::vector<std::string> ids;
  torch::Tensor images;  // (N, C, H, W)
  torch::Tensor labels;  // (N) long, undefined when the manifest carries no labels
  torch::Tensor masks;   // (N, H, W), undefined when absent
  std::vector<std::string> class_names;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  std::int64_t num_classes() const { return static_cast<std::int64_t>(class_names.size()); }
  ImageShape image_shape() const { return {images.size(1), images.size(2), images.size(3)}; }
  Dataset subset(const std::vector<std::int64_t>& indices) const;
};

Dataset to_dataset(const std::vector<ToyScene>& scenes);

/// Decodes every entry, resizing to `shape` when it differs from the file.
Dataset load_dataset(const DatasetManifest& manifest, std::optional<ImageShape> shape = {});

struct Batch {
  std::vector<std::int64_t> indices;
  std::vector<std::string> ids;
  torch::Tensor images;
  torch::Tensor labels;
};

/// Deterministic single-consumer stream over a manifest. Files are decoded
/// lazily per batch; decoding failures name the offending path.
class BatchIterator {
 public:
  BatchIterator(DatasetManifest manifest, std::int64_t batch_size, std::uint64_t seed,
                bool shuffle, ImageShape shape);

  std::optional<Batch> next();
  std::int64_t num_batches() const;
  void reset();

 private:
  DatasetManifest manifest_;
  std::int64_t batch_size_;
  ImageShape shape_;
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator load_batches(const DatasetManifest& manifest, std::int64_t batch_size,
                           std::uint64_t seed, bool shuffle,
                           std::optional<ImageShape> shape = {});

/// Index order for one epoch; identity when `shuffle` is false.
std::vector<std::int64_t> epoch_order(std::int64_t n, std::mt19937_64& rng, bool shuffle);

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

/// Padding in pixels around and between grid panels.
inline constexpr std::int64_t kGridPadding = 2;

struct GridRow {
  torch::Tensor query;           // (C, H, W), shown in grey unless C == 3
  torch::Tensor saliency;        // (H, W)
  torch::Tensor counterfactual;  // (C, H, W)
};

/// Per-pixel max-over-channels |query - counterfactual|, shape (H, W).
torch::Tensor change_map(const torch::Tensor& query, const torch::Tensor& counterfactual);

/// Panels per row: query | saliency overlay | counterfactual | change heatmap.
/// Output height is rows * H + (rows + 1) * kGridPadding.
torch::Tensor render_grid(const std::vector<GridRow>& rows);

void save_grid(const std::vector<GridRow>& rows, const std::filesystem::path& path);

}  // namespace safe
