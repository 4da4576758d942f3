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

#include <filesystem>

namespace safe {

/// Decodes an 8-bit PNG into a (channels, H, W) float tensor in [0, 1].
/// `channels` is 1 or 3; colour images are converted to grey by channel
/// averaging and grey images are replicated to RGB when needed.
torch::Tensor read_png(const std::filesystem::path& path, int channels = 3);

/// Encodes a (1, H, W), (3, H, W) or (H, W) tensor with values in [0, 1] as an
/// 8-bit PNG. Values are clamped and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Bilinear resize of a (C, H, W) image.
torch::Tensor resize_image(const torch::Tensor& image, std::int64_t height, std::int64_t width);

/// Maps an (H, W) tensor in [0, 1] to a (3, H, W) jet-coloured heatmap.
torch::Tensor heatmap(const torch::Tensor& map);

/// (3, H, W) view of an image: RGB as is, one channel repeated, otherwise the
/// channel mean repeated.
torch::Tensor to_rgb(const torch::Tensor& image);

/// Alpha-blends the heatmap of `map` over a (3, H, W) image.
torch::Tensor overlay(const torch::Tensor& image, const torch::Tensor& map, double alpha = 0.5);

}  // namespace safe
