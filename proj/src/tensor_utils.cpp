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

#include "safe/tensor_utils.hpp"

#include <sstream>

#include "safe/errors.hpp"

namespace safe {

std::string shape_string(at::IntArrayRef sizes) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) os << ", ";
    os << sizes[i];
  }
  os << ")";
  return os.str();
}

std::string shape_string(const ImageShape& shape) {
  return shape_string(shape.dims());
}

void check_image(const torch::Tensor& image, const ImageShape& shape, const std::string& what) {
  if (!image.defined() || image.dim() != 3 || image.size(0) != shape.channels ||
      image.size(1) != shape.height || image.size(2) != shape.width) {
    throw ShapeError(what + ": expected image of shape " + shape_string(shape) + ", got " +
                     (image.defined() ? shape_string(image.sizes()) : std::string("undefined")));
  }
}

void check_batch(const torch::Tensor& batch, const ImageShape& shape, const std::string& what) {
  if (!batch.defined() || batch.dim() != 4 || batch.size(1) != shape.channels ||
      batch.size(2) != shape.height || batch.size(3) != shape.width) {
    throw ShapeError(what + ": expected batch of shape (N, " + std::to_string(shape.channels) +
                     ", " + std::to_string(shape.height) + ", " + std::to_string(shape.width) +
                     "), got " +
                     (batch.defined() ? shape_string(batch.sizes()) : std::string("undefined")));
  }
}

void check_finite(const torch::Tensor& t, const std::string& what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericalError("non-finite values in " + what);
  }
}

torch::Tensor stack_images(const std::vector<torch::Tensor>& images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image list");
  return torch::stack(images);
}

torch::Tensor one_hot_labels(const torch::Tensor& labels, std::int64_t num_classes) {
  return torch::one_hot(labels.to(torch::kLong), num_classes).to(torch::kFloat);
}

torch::Tensor counterfactual_targets(const torch::Tensor& labels, std::int64_t num_classes,
                                     torch::Generator& generator) {
  auto y = labels.to(torch::kLong);
  if (num_classes == 2) return 1 - y;
  // Offset in [1, d-1] keeps the target away from the current label.
  auto offset = torch::randint(1, num_classes, y.sizes(), generator, torch::kLong);
  return (y + offset) % num_classes;
}

void seed_everything(std::uint64_t seed) {
  torch::manual_seed(seed);
}

std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
  return out;
}

bool parameters_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].sizes().equals(b[i].sizes()) || !torch::equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace safe
