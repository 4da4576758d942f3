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
#include <string>

#include "safe/greybox.hpp"

namespace safe {

/// Maps whose maximum does not exceed this are returned as all zeros.
inline constexpr double kSaliencyEpsilon = 1e-8;

/// Per-pixel relevance in [0, 1] with the input's spatial size. Either the
/// maximum is exactly 1 or the map is identically zero.
struct SaliencyMap {
  torch::Tensor values;  // (H, W)
  LabelId source_class = 0;
  std::string source_layer;
};

/// Which class the training-time saliency map explains: the current label
/// `y`, the counterfactual target, or the elementwise max of both.
enum class SaliencyMode { Current, Target, Max };

SaliencyMode parse_saliency_mode(const std::string& name);
std::string to_string(SaliencyMode mode);

/// Divides each (H, W) slice of a (N, H, W) tensor by its max, zeroing slices
/// whose max is <= kSaliencyEpsilon.
torch::Tensor normalize_saliency(const torch::Tensor& maps);

/// Grad-CAM from captured activations/gradients (N, K, h, w): channel weights
/// are the spatial mean of the gradients, the rectified weighted channel sum
/// is upsampled bilinearly to (height, width) and normalized.
torch::Tensor grad_cam_from_capture(const Capture& captured, std::int64_t height, std::int64_t width);

/// Batched Grad-CAM at the model's capture layer; returns (N, H, W).
torch::Tensor grad_cam_batch(GreyBox& model, const torch::Tensor& batch, const torch::Tensor& targets);

SaliencyMap grad_cam(GreyBox& model, const torch::Tensor& x, LabelId target_class);

/// Training-time saliency for a batch; `labels` and `targets` are (N).
torch::Tensor saliency_for_training_batch(GreyBox& model, const torch::Tensor& batch,
                                          const torch::Tensor& labels, const torch::Tensor& targets,
                                          SaliencyMode mode = SaliencyMode::Current);

/// Throws InvalidRequest when y == y_target.
SaliencyMap saliency_for_training(GreyBox& model, const torch::Tensor& x, LabelId y, LabelId y_target,
                                  SaliencyMode mode = SaliencyMode::Current);

/// Heatmap of `map` alpha-blended over `image`, written as PNG.
void write_saliency_overlay(const std::filesystem::path& path, const torch::Tensor& image,
                            const SaliencyMap& map, double alpha = 0.5);

}  // namespace safe
