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
#include <utility>

#include "safe/greybox.hpp"
#include "safe/saliency.hpp"
#include "safe/tensor_utils.hpp"

namespace safe {

/// Residual encoder-decoder configuration of the counterfactual generator.
struct GeneratorConfig {
  ImageShape image_shape{3, 64, 64};
  std::int64_t num_classes = 2;
  /// Attention masks; the last one is the background mask that keeps the
  /// input, the others select their content map.
  std::int64_t num_masks = 2;
  std::int64_t base_channels = 16;
  std::int64_t num_downsampling = 2;
  std::int64_t num_residual = 4;
  /// Initial bias of the background attention logit. Positive values start
  /// training close to the identity mapping.
  double background_bias = 0.0;
};

/// Everything one generator call produces. Batched shapes:
/// image (N, C, H, W), saliency (N, 1, H, W), attention (N, m, H, W),
/// content (N, m-1, C+1, H, W).
struct GeneratorOutput {
  torch::Tensor image;
  torch::Tensor saliency;
  torch::Tensor attention;
  torch::Tensor content;
};

/// out = sum_i content_i * attention_i + input * attention_background, with the
/// attention maps broadcast over channels. `input` is the (N, C+1, H, W) stack
/// of image and saliency; returns the composed stack of the same shape.
torch::Tensor compose(const torch::Tensor& input, const torch::Tensor& attention,
                      const torch::Tensor& content);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig config);

  /// x (N, C, H, W), saliency (N, 1, H, W) or (N, H, W), target labels (N).
  GeneratorOutput forward(const torch::Tensor& x, const torch::Tensor& saliency,
                          const torch::Tensor& target_labels);

  const GeneratorConfig& config() const { return config_; }
  torch::nn::Conv2d& attention_head() { return attention_head_; }
  torch::nn::Conv2d& content_head() { return content_head_; }

 private:
  GeneratorConfig config_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::ModuleList residual_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
  torch::nn::Conv2d attention_head_{nullptr};
  torch::nn::Conv2d content_head_{nullptr};
};
TORCH_MODULE(Generator);

/// Single-image generation: x (C, H, W) and its saliency map. The returned
/// tensors carry no batch dimension.
GeneratorOutput generate(Generator& generator, const torch::Tensor& x, const SaliencyMap& s,
                         LabelId target);

struct DiscriminatorConfig {
  ImageShape image_shape{3, 64, 64};
  std::int64_t num_classes = 2;
  std::int64_t base_channels = 16;
  std::int64_t num_layers = 4;
  double leaky_slope = 0.01;
};

/// Shared strided conv trunk with a real-valued source head (no squashing) and
/// a class head.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorConfig config);

  /// (src (N), class logits (N, d)).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& images);
  torch::Tensor src(const torch::Tensor& images);

  const DiscriminatorConfig& config() const { return config_; }

 private:
  torch::Tensor trunk(const torch::Tensor& images);

  DiscriminatorConfig config_;
  torch::nn::ModuleList convs_{nullptr};
  torch::nn::Conv2d src_head_{nullptr};
  torch::nn::Conv2d cls_head_{nullptr};
};
TORCH_MODULE(Discriminator);

struct Discrimination {
  double src = 0.0;
  ClassProbabilities cls;
};

/// Scores one (C, H, W) image. Throws NumericalError on non-finite outputs.
Discrimination discriminate(Discriminator& discriminator, const torch::Tensor& image);

void save_generator(Generator& generator, const std::filesystem::path& descriptor);
Generator load_generator(const std::filesystem::path& descriptor);
void save_discriminator(Discriminator& discriminator, const std::filesystem::path& descriptor);
Discriminator load_discriminator(const std::filesystem::path& descriptor);

}  // namespace safe
