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

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>

#include "safe/greybox.hpp"
#include "safe/models.hpp"
#include "safe/trainer.hpp"

namespace fixture {

// Single stage "input" whose activation is the image itself. Class 0 logit is
// the sum of the activation (scaled by `scale`), every other class logit is a
// constant that ignores it.
class SumLogitGreyBox : public safe::GreyBox {
 public:
  explicit SumLogitGreyBox(safe::ImageShape shape, std::int64_t classes = 2, double scale = 1.0)
      : shape_(shape), classes_(classes), scale_(scale) {}

  std::int64_t num_classes() const override { return classes_; }
  safe::ImageShape input_shape() const override { return shape_; }
  std::vector<std::string> layer_names() const override { return {"input"}; }
  std::string capture_layer() const override { return "input"; }

  torch::Tensor activation(const torch::Tensor& batch, const std::string& layer) override {
    require_layer(layer);
    return batch;
  }
  torch::Tensor logits_from(const torch::Tensor& act, const std::string& layer) override {
    require_layer(layer);
    auto first = (scale_ * act.flatten(1).sum(1)).unsqueeze(1);
    auto rest = torch::full({act.size(0), classes_ - 1}, 0.25, act.options());
    return torch::cat({first, rest}, 1);
  }
  torch::Tensor features(const torch::Tensor& batch) override { return batch.mean({2, 3}); }

 private:
  safe::ImageShape shape_;
  std::int64_t classes_;
  double scale_;
};

// Every logit ignores the input.
class ConstantLogitGreyBox : public SumLogitGreyBox {
 public:
  using SumLogitGreyBox::SumLogitGreyBox;
  torch::Tensor logits_from(const torch::Tensor& act, const std::string& layer) override {
    require_layer(layer);
    return torch::arange(num_classes(), act.options()).unsqueeze(0).expand({act.size(0), num_classes()}) * 0.1 +
           0 * act.flatten(1).narrow(1, 0, 1);
  }
};

// A ConvClassifier small enough for finite differences.
inline safe::ConvClassifier tiny_classifier(std::int64_t classes = 3, std::uint64_t seed = 1,
                                            torch::Dtype dtype = torch::kDouble) {
  safe::ConvClassifierConfig c;
  c.num_classes = classes;
  c.input_shape = {2, 8, 8};
  c.channels = {3, 4};
  c.strides = {2, 1};
  c.capture_layer = "stage2";
  c.seed = seed;
  torch::manual_seed(seed);
  safe::ConvClassifier m(c);
  m->to(dtype);
  return m;
}

inline safe::GeneratorConfig tiny_generator_config(safe::ImageShape shape = {3, 8, 8},
                                                   std::int64_t classes = 2) {
  safe::GeneratorConfig g;
  g.image_shape = shape;
  g.num_classes = classes;
  g.base_channels = 2;
  g.num_downsampling = 1;
  g.num_residual = 1;
  return g;
}

inline safe::DiscriminatorConfig tiny_discriminator_config(safe::ImageShape shape = {3, 8, 8},
                                                           std::int64_t classes = 2) {
  safe::DiscriminatorConfig d;
  d.image_shape = shape;
  d.num_classes = classes;
  d.base_channels = 2;
  d.num_layers = 2;
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("safe_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline torch::Tensor uniform(std::vector<std::int64_t> shape, std::uint64_t seed,
                             torch::Dtype dtype = torch::kDouble) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand(shape, g, torch::TensorOptions().dtype(dtype));
}

}  // namespace fixture
