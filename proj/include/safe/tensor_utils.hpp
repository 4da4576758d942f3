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
#include <string>
#include <vector>

namespace safe {

/// Class index in [0, d).
using LabelId = std::int64_t;

/// Image tensors are stored channel-first: a single image is (C, H, W) and
/// a batch is (N, C, H, W), float32 with values in [0, 1].
struct ImageShape {
  std::int64_t channels = 3;
  std::int64_t height = 64;
  std::int64_t width = 64;

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
  std::vector<std::int64_t> dims() const { return {channels, height, width}; }
};

std::string shape_string(at::IntArrayRef sizes);
std::string shape_string(const ImageShape& shape);

/// Throws ShapeError when `image` is not a single (C, H, W) image of `shape`.
void check_image(const torch::Tensor& image, const ImageShape& shape, const std::string& what);

/// Throws ShapeError when `batch` is not (N, C, H, W) with the given image shape.
void check_batch(const torch::Tensor& batch, const ImageShape& shape, const std::string& what);

/// Throws NumericalError naming `what` when `t` holds NaN or infinity.
void check_finite(const torch::Tensor& t, const std::string& what);

/// Stacks single images into a batch.
torch::Tensor stack_images(const std::vector<torch::Tensor>& images);

/// One-hot encoding of `labels` (N) into (N, num_classes) float.
torch::Tensor one_hot_labels(const torch::Tensor& labels, std::int64_t num_classes);

/// Complement label for d = 2, uniformly sampled other label otherwise.
torch::Tensor counterfactual_targets(const torch::Tensor& labels, std::int64_t num_classes,
                                     torch::Generator& generator);

/// Seeds the global torch generator. Single-threaded CPU runs are then
/// bit-reproducible.
void seed_everything(std::uint64_t seed);

/// Copies all parameters and buffers of `module` into a flat list, used for
/// bit-identity checks.
std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& module);
bool parameters_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);

}  // namespace safe
