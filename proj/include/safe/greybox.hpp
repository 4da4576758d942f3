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
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "safe/data.hpp"
#include "safe/tensor_utils.hpp"

namespace safe {

/// Softmax output for one image.
struct ClassProbabilities {
  std::vector<double> probs;
  LabelId predicted = 0;

  /// From a length-d probability tensor.
  static ClassProbabilities from_tensor(const torch::Tensor& probs);
};

/// The classifier under explanation. Besides logits it exposes named
/// intermediate stages so that activations, and gradients of any logit with
/// respect to them, can be read. Implementations must be usable from several
/// threads at once as long as nobody trains them.
class GreyBox {
 public:
  virtual ~GreyBox() = default;

  virtual std::int64_t num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::vector<std::string> layer_names() const = 0;
  virtual std::string capture_layer() const = 0;

  /// Activation of `layer` for a batch (N, C, H, W).
  virtual torch::Tensor activation(const torch::Tensor& batch, const std::string& layer) = 0;
  /// Logits (N, d) computed from the activation of `layer` onwards.
  virtual torch::Tensor logits_from(const torch::Tensor& activation, const std::string& layer) = 0;
  virtual torch::Tensor logits(const torch::Tensor& batch);
  /// Penultimate features used as a default embedding for distribution metrics.
  virtual torch::Tensor features(const torch::Tensor& batch);

  /// Throws ConfigError listing the valid names when `layer` is unknown.
  void require_layer(const std::string& layer) const;
};

/// Softmax probabilities (N, d) without gradient tracking.
torch::Tensor predict_probs(GreyBox& model, const torch::Tensor& batch);
/// argmax labels (N).
torch::Tensor predict_labels(GreyBox& model, const torch::Tensor& batch);

/// One ClassProbabilities per input image; throws ShapeError on any image that
/// does not match the model's input shape.
std::vector<ClassProbabilities> predict(GreyBox& model, const std::vector<torch::Tensor>& images);

struct Capture {
  torch::Tensor activations;
  torch::Tensor gradients;  // d logit[target] / d activations, same shape
};

/// Activations of `layer` and the gradient of the target logit with respect
/// to them. Works on a single image (C, H, W) or a batch with one target per
/// sample. Never modifies the model.
Capture capture(GreyBox& model, const torch::Tensor& x, const std::string& layer,
                LabelId target_class);
Capture capture_batch(GreyBox& model, const torch::Tensor& batch, const std::string& layer,
                      const torch::Tensor& target_classes);

// ---------------------------------------------------------------------------

struct ConvClassifierConfig {
  std::int64_t num_classes = 2;
  ImageShape input_shape{3, 64, 64};
  std::vector<std::int64_t> channels{16, 32, 64, 64};
  std::vector<std::int64_t> strides{2, 2, 1, 1};
  std::string capture_layer = "stage4";
  std::uint64_t seed = 0;
};

/// Toy grey-box: conv stages (3x3 conv + ReLU, named stage1..stageK),
/// global average pooling and a linear head.
class ConvClassifierImpl : public torch::nn::Module, public GreyBox {
 public:
  explicit ConvClassifierImpl(ConvClassifierConfig config);

  std::int64_t num_classes() const override { return config_.num_classes; }
  ImageShape input_shape() const override { return config_.input_shape; }
  std::vector<std::string> layer_names() const override;
  std::string capture_layer() const override { return config_.capture_layer; }

  torch::Tensor activation(const torch::Tensor& batch, const std::string& layer) override;
  torch::Tensor logits_from(const torch::Tensor& activation, const std::string& layer) override;
  torch::Tensor logits(const torch::Tensor& batch) override;
  torch::Tensor features(const torch::Tensor& batch) override;

  torch::Tensor forward(const torch::Tensor& batch) { return logits(batch); }

  const ConvClassifierConfig& config() const { return config_; }
  ConvClassifierConfig& mutable_config() { return config_; }
  torch::nn::Linear& head() { return head_; }
  std::vector<torch::nn::Conv2d>& convs() { return convs_; }

 private:
  std::size_t stage_index(const std::string& layer) const;

  ConvClassifierConfig config_;
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ConvClassifier);

/// Sets requires_grad(false) on every parameter and switches to eval mode.
void freeze(torch::nn::Module& module);

struct GreyBoxTrainConfig {
  std::int64_t epochs = 4;
  double learning_rate = 2e-3;
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  // Weight of the uniform-prediction term on object-erased copies. Only used
  // when the training set has masks.
  double neutral_weight = 1.0;
};

/// Pixels inside the (dilated) mask are replaced with the mean colour of the
/// rest of the image. images (N, C, H, W), masks (N, H, W) or (N, 1, H, W).
torch::Tensor erase_objects(const torch::Tensor& images, const torch::Tensor& masks);
inline constexpr int kEraseMargin = 2;

struct GreyBoxHistory {
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
  std::vector<double> train_loss;
};

/// Classification accuracy of `model` on a labelled dataset.
double accuracy(GreyBox& model, const Dataset& data, std::int64_t batch_size = 128);

/// Trains a ConvClassifier with Adam and cross-entropy on the dataset labels.
/// Throws ConfigError when the training labels contain fewer than two classes.
std::pair<ConvClassifier, GreyBoxHistory> train_greybox(const Dataset& train, const Dataset* val,
                                                         const GreyBoxTrainConfig& config,
                                                         ConvClassifierConfig arch = {});

/// `<stem>.pt` weights and `<stem>.json` descriptor.
void save_greybox(ConvClassifier& model, const std::filesystem::path& descriptor);
ConvClassifier load_greybox(const std::filesystem::path& descriptor);

}  // namespace safe
