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

#include "safe/saliency.hpp"

#include "safe/errors.hpp"
#include "safe/image_io.hpp"

namespace safe {

namespace F = torch::nn::functional;

SaliencyMode parse_saliency_mode(const std::string& name) {
  if (name == "current") return SaliencyMode::Current;
  if (name == "target") return SaliencyMode::Target;
  if (name == "max") return SaliencyMode::Max;
  throw ConfigError("unknown saliency mode '" + name + "' (expected current, target or max)");
}

std::string to_string(SaliencyMode mode) {
  switch (mode) {
    case SaliencyMode::Current: return "current";
    case SaliencyMode::Target: return "target";
    case SaliencyMode::Max: return "max";
  }
  return "current";
}

torch::Tensor normalize_saliency(const torch::Tensor& maps) {
  auto peak = std::get<0>(maps.flatten(1).max(1)).view({-1, 1, 1});
  auto safe_peak = torch::where(peak > kSaliencyEpsilon, peak, torch::ones_like(peak));
  return torch::where(peak > kSaliencyEpsilon, maps / safe_peak, torch::zeros_like(maps));
}

torch::Tensor grad_cam_from_capture(const Capture& captured, std::int64_t height, std::int64_t width) {
  const auto& a = captured.activations;
  const auto& g = captured.gradients;
  if (a.dim() != 4 || !a.sizes().equals(g.sizes())) {
    throw ShapeError("grad_cam: activations " + shape_string(a.sizes()) + " and gradients " +
                     shape_string(g.sizes()) + " must be equal (N, K, h, w) tensors");
  }
  auto weights = g.mean({2, 3}, true);
  auto raw = torch::relu((weights * a).sum(1, true));
  if (raw.size(2) != height || raw.size(3) != width) {
    raw = F::interpolate(raw, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{height, width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
  }
  return normalize_saliency(raw.squeeze(1)).clamp(0.0, 1.0);
}

torch::Tensor grad_cam_batch(GreyBox& model, const torch::Tensor& batch, const torch::Tensor& targets) {
  const auto layer = model.capture_layer();
  auto captured = capture_batch(model, batch, layer, targets);
  if (!torch::isfinite(captured.gradients).all().item<bool>()) {
    throw NumericalError("non-finite gradients at layer '" + layer + "'");
  }
  return grad_cam_from_capture(captured, batch.size(2), batch.size(3));
}

SaliencyMap grad_cam(GreyBox& model, const torch::Tensor& x, LabelId target_class) {
  check_image(x, model.input_shape(), "grad_cam");
  auto maps = grad_cam_batch(model, x.unsqueeze(0), torch::tensor({target_class}, torch::kLong));
  return {maps.squeeze(0), target_class, model.capture_layer()};
}

torch::Tensor saliency_for_training_batch(GreyBox& model, const torch::Tensor& batch,
                                          const torch::Tensor& labels, const torch::Tensor& targets,
                                          SaliencyMode mode) {
  if (labels.eq(targets).any().item<bool>()) {
    throw InvalidRequest("saliency request with target label equal to the current label");
  }
  switch (mode) {
    case SaliencyMode::Current: return grad_cam_batch(model, batch, labels);
    case SaliencyMode::Target: return grad_cam_batch(model, batch, targets);
    case SaliencyMode::Max:
      return normalize_saliency(torch::maximum(grad_cam_batch(model, batch, labels),
                                               grad_cam_batch(model, batch, targets)));
  }
  throw ConfigError("unhandled saliency mode");
}

SaliencyMap saliency_for_training(GreyBox& model, const torch::Tensor& x, LabelId y, LabelId y_target,
                                  SaliencyMode mode) {
  if (y == y_target) throw InvalidRequest("target label " + std::to_string(y) + " equals the current label");
  check_image(x, model.input_shape(), "saliency_for_training");
  auto maps = saliency_for_training_batch(model, x.unsqueeze(0), torch::tensor({y}, torch::kLong),
                                          torch::tensor({y_target}, torch::kLong), mode);
  return {maps.squeeze(0), mode == SaliencyMode::Target ? y_target : y, model.capture_layer()};
}

void write_saliency_overlay(const std::filesystem::path& path, const torch::Tensor& image,
                            const SaliencyMap& map, double alpha) {
  write_png(path, overlay(image, map.values, alpha));
}

}  // namespace safe
