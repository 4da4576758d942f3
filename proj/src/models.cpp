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

#include "safe/models.hpp"

#include <fstream>

#include <json.hpp>

#include "safe/errors.hpp"

namespace safe {

using nlohmann::json;
namespace nn = torch::nn;

namespace {

nn::InstanceNorm2d instance_norm(std::int64_t channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true));
}

class ResidualBlockImpl : public nn::Module {
 public:
  explicit ResidualBlockImpl(std::int64_t channels)
      : body_(nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1).bias(false)),
              instance_norm(channels), nn::ReLU(),
              nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1).bias(false)),
              instance_norm(channels)) {
    register_module("body", body_);
  }
  torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }

 private:
  nn::Sequential body_;
};
TORCH_MODULE(ResidualBlock);

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed descriptor " + path.string() + ": " + e.what());
  }
}

std::filesystem::path weights_for(const std::filesystem::path& descriptor) {
  auto w = descriptor;
  w.replace_extension(".pt");
  return w;
}

ImageShape shape_from(const json& j) {
  const auto dims = j.get<std::vector<std::int64_t>>();
  if (dims.size() != 3) throw ConfigError("image shape must have three entries");
  return {dims[0], dims[1], dims[2]};
}

}  // namespace

torch::Tensor compose(const torch::Tensor& input, const torch::Tensor& attention,
                      const torch::Tensor& content) {
  const auto m = attention.size(1);
  if (input.dim() != 4 || attention.dim() != 4 || content.dim() != 5 || content.size(1) != m - 1 ||
      content.size(2) != input.size(1) || attention.size(0) != input.size(0) ||
      attention.size(2) != input.size(2) || attention.size(3) != input.size(3) ||
      content.size(3) != input.size(2) || content.size(4) != input.size(3)) {
    throw ShapeError("compose: input " + shape_string(input.sizes()) + ", attention " +
                     shape_string(attention.sizes()) + ", content " + shape_string(content.sizes()) +
                     " are inconsistent");
  }
  auto out = input * attention.narrow(1, m - 1, 1);
  for (std::int64_t i = 0; i < m - 1; ++i) {
    out = out + content.select(1, i) * attention.narrow(1, i, 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  if (config_.num_masks < 2) throw ConfigError("generator needs at least two attention masks");
  if (config_.num_classes < 2) throw ConfigError("generator needs at least two classes");
  const auto c = config_.image_shape.channels;
  const auto scale = std::int64_t{1} << config_.num_downsampling;
  if (config_.image_shape.height % scale != 0 || config_.image_shape.width % scale != 0) {
    throw ConfigError("image size must be divisible by 2^num_downsampling");
  }

  std::int64_t ch = config_.base_channels;
  encoder_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(c + 1 + config_.num_classes, ch, 5).padding(2).bias(false)),
      instance_norm(ch), nn::ReLU());
  for (std::int64_t i = 0; i < config_.num_downsampling; ++i) {
    encoder_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch * 2, 4).stride(2).padding(1).bias(false)));
    encoder_->push_back(instance_norm(ch * 2));
    encoder_->push_back(nn::ReLU());
    ch *= 2;
  }
  residual_ = nn::ModuleList();
  for (std::int64_t i = 0; i < config_.num_residual; ++i) residual_->push_back(ResidualBlock(ch));
  decoder_ = nn::Sequential();
  for (std::int64_t i = 0; i < config_.num_downsampling; ++i) {
    decoder_->push_back(nn::Upsample(nn::UpsampleOptions()
                                         .scale_factor(std::vector<double>{2.0, 2.0})
                                         .mode(torch::kNearest)));
    decoder_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch / 2, 3).padding(1).bias(false)));
    decoder_->push_back(instance_norm(ch / 2));
    decoder_->push_back(nn::ReLU());
    ch /= 2;
  }
  attention_head_ = nn::Conv2d(nn::Conv2dOptions(ch, config_.num_masks, 3).padding(1));
  content_head_ = nn::Conv2d(nn::Conv2dOptions(ch, (config_.num_masks - 1) * (c + 1), 3).padding(1));
  register_module("encoder", encoder_);
  register_module("residual", residual_);
  register_module("decoder", decoder_);
  register_module("attention_head", attention_head_);
  register_module("content_head", content_head_);

  torch::NoGradGuard no_grad;
  attention_head_->bias.zero_();
  attention_head_->bias[config_.num_masks - 1].fill_(config_.background_bias);
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& saliency,
                                       const torch::Tensor& target_labels) {
  check_batch(x, config_.image_shape, "generator image");
  auto s = saliency.dim() == 3 ? saliency.unsqueeze(1) : saliency;
  if (s.dim() != 4 || s.size(0) != x.size(0) || s.size(1) != 1 || s.size(2) != x.size(2) ||
      s.size(3) != x.size(3)) {
    throw ShapeError("generator saliency: expected (N, 1, H, W) matching the image, got " +
                     shape_string(saliency.sizes()));
  }
  auto labels = target_labels.to(torch::kLong).reshape({-1});
  if (labels.size(0) != x.size(0)) throw ShapeError("generator: one target label per image required");
  if ((labels < 0).any().item<bool>() || (labels >= config_.num_classes).any().item<bool>()) {
    throw InvalidRequest("generator: target label outside [0, " + std::to_string(config_.num_classes) + ")");
  }
  const auto n = x.size(0);
  const auto h = x.size(2);
  const auto w = x.size(3);
  const auto c = x.size(1);
  auto label_planes = one_hot_labels(labels, config_.num_classes).to(x.dtype()).view({n, config_.num_classes, 1, 1}).expand({n, config_.num_classes, h, w});
  auto stack = torch::cat({x, s}, 1);

  auto features = encoder_->forward(torch::cat({stack, label_planes}, 1));
  for (const auto& block : *residual_) features = block->as<ResidualBlock>()->forward(features);
  features = decoder_->forward(features);

  GeneratorOutput out;
  out.attention = torch::softmax(attention_head_->forward(features), 1);
  out.content = torch::sigmoid(content_head_->forward(features)).view({n, config_.num_masks - 1, c + 1, h, w});
  auto composed = compose(stack, out.attention, out.content);
  out.image = composed.narrow(1, 0, c);
  out.saliency = composed.narrow(1, c, 1);
  return out;
}

GeneratorOutput generate(Generator& generator, const torch::Tensor& x, const SaliencyMap& s,
                         LabelId target) {
  check_image(x, generator->config().image_shape, "generate");
  if (!s.values.defined() || s.values.dim() != 2 || s.values.size(0) != x.size(1) ||
      s.values.size(1) != x.size(2)) {
    throw ShapeError("generate: saliency map shape does not match the image");
  }
  auto out = generator->forward(x.unsqueeze(0), s.values.unsqueeze(0).unsqueeze(0),
                                torch::tensor({target}, torch::kLong));
  return {out.image.squeeze(0), out.saliency.squeeze(0).squeeze(0), out.attention.squeeze(0),
          out.content.squeeze(0)};
}

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig config) : config_(std::move(config)) {
  if (config_.num_layers < 1) throw ConfigError("discriminator needs at least one layer");
  const auto scale = std::int64_t{1} << config_.num_layers;
  if (config_.image_shape.height % scale != 0 || config_.image_shape.width % scale != 0) {
    throw ConfigError("image size must be divisible by 2^num_layers");
  }
  convs_ = nn::ModuleList();
  std::int64_t in = config_.image_shape.channels;
  std::int64_t out = config_.base_channels;
  for (std::int64_t i = 0; i < config_.num_layers; ++i) {
    convs_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    in = out;
    out *= 2;
  }
  const auto kh = config_.image_shape.height / scale;
  const auto kw = config_.image_shape.width / scale;
  src_head_ = nn::Conv2d(nn::Conv2dOptions(in, 1, {kh, kw}));
  cls_head_ = nn::Conv2d(nn::Conv2dOptions(in, config_.num_classes, {kh, kw}).bias(false));
  register_module("trunk", convs_);
  register_module("src_head", src_head_);
  register_module("cls_head", cls_head_);
}

torch::Tensor DiscriminatorImpl::trunk(const torch::Tensor& images) {
  check_batch(images, config_.image_shape, "discriminator");
  auto h = images;
  for (const auto& conv : *convs_) {
    h = torch::leaky_relu(conv->as<nn::Conv2d>()->forward(h), config_.leaky_slope);
  }
  return h;
}

std::pair<torch::Tensor, torch::Tensor> DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto h = trunk(images);
  return {src_head_->forward(h).flatten(), cls_head_->forward(h).flatten(1)};
}

torch::Tensor DiscriminatorImpl::src(const torch::Tensor& images) {
  return src_head_->forward(trunk(images)).flatten();
}

Discrimination discriminate(Discriminator& discriminator, const torch::Tensor& image) {
  check_image(image, discriminator->config().image_shape, "discriminate");
  torch::NoGradGuard no_grad;
  auto [src, logits] = discriminator->forward(image.unsqueeze(0));
  check_finite(src, "discriminator source score");
  check_finite(logits, "discriminator class logits");
  return {src.item<double>(), ClassProbabilities::from_tensor(torch::softmax(logits[0], 0))};
}

// ---------------------------------------------------------------------------

void save_generator(Generator& generator, const std::filesystem::path& descriptor) {
  const auto weights = weights_for(descriptor);
  const auto& c = generator->config();
  write_json(descriptor, {{"kind", "generator"},
                          {"weights", weights.filename().string()},
                          {"image_shape", c.image_shape.dims()},
                          {"num_classes", c.num_classes},
                          {"num_masks", c.num_masks},
                          {"base_channels", c.base_channels},
                          {"num_downsampling", c.num_downsampling},
                          {"num_residual", c.num_residual},
                          {"background_bias", c.background_bias}});
  torch::save(generator, weights.string());
}

Generator load_generator(const std::filesystem::path& descriptor) {
  const auto j = read_json(descriptor);
  GeneratorConfig c;
  std::filesystem::path weights;
  try {
    c.image_shape = shape_from(j.at("image_shape"));
    c.num_classes = j.at("num_classes").get<std::int64_t>();
    c.num_masks = j.at("num_masks").get<std::int64_t>();
    c.base_channels = j.at("base_channels").get<std::int64_t>();
    c.num_downsampling = j.at("num_downsampling").get<std::int64_t>();
    c.num_residual = j.at("num_residual").get<std::int64_t>();
    c.background_bias = j.value("background_bias", 0.0);
    weights = descriptor.parent_path() / j.at("weights").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid generator descriptor " + descriptor.string() + ": " + e.what());
  }
  if (!std::filesystem::exists(weights)) throw IoError("missing weights file " + weights.string());
  Generator g(c);
  torch::load(g, weights.string());
  g->eval();
  return g;
}

void save_discriminator(Discriminator& discriminator, const std::filesystem::path& descriptor) {
  const auto weights = weights_for(descriptor);
  const auto& c = discriminator->config();
  write_json(descriptor, {{"kind", "discriminator"},
                          {"weights", weights.filename().string()},
                          {"image_shape", c.image_shape.dims()},
                          {"num_classes", c.num_classes},
                          {"base_channels", c.base_channels},
                          {"num_layers", c.num_layers},
                          {"leaky_slope", c.leaky_slope}});
  torch::save(discriminator, weights.string());
}

Discriminator load_discriminator(const std::filesystem::path& descriptor) {
  const auto j = read_json(descriptor);
  DiscriminatorConfig c;
  std::filesystem::path weights;
  try {
    c.image_shape = shape_from(j.at("image_shape"));
    c.num_classes = j.at("num_classes").get<std::int64_t>();
    c.base_channels = j.at("base_channels").get<std::int64_t>();
    c.num_layers = j.at("num_layers").get<std::int64_t>();
    c.leaky_slope = j.value("leaky_slope", 0.01);
    weights = descriptor.parent_path() / j.at("weights").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid discriminator descriptor " + descriptor.string() + ": " + e.what());
  }
  if (!std::filesystem::exists(weights)) throw IoError("missing weights file " + weights.string());
  Discriminator d(c);
  torch::load(d, weights.string());
  d->eval();
  return d;
}

}  // namespace safe
