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

#include "safe/greybox.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "safe/errors.hpp"

namespace safe {

using nlohmann::json;
namespace F = torch::nn::functional;

ClassProbabilities ClassProbabilities::from_tensor(const torch::Tensor& probs) {
  auto p = probs.detach().to(torch::kDouble).contiguous();
  ClassProbabilities out;
  out.probs.assign(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
  out.predicted = p.argmax().item<LabelId>();
  return out;
}

torch::Tensor GreyBox::logits(const torch::Tensor& batch) {
  const auto names = layer_names();
  return logits_from(activation(batch, names.back()), names.back());
}

torch::Tensor GreyBox::features(const torch::Tensor&) {
  throw ConfigError("this grey-box model does not expose penultimate features");
}

void GreyBox::require_layer(const std::string& layer) const {
  const auto names = layer_names();
  if (std::find(names.begin(), names.end(), layer) != names.end()) return;
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown layer '" + layer + "'; valid layers: " + valid);
}

torch::Tensor predict_probs(GreyBox& model, const torch::Tensor& batch) {
  check_batch(batch, model.input_shape(), "predict");
  torch::NoGradGuard no_grad;
  return torch::softmax(model.logits(batch), 1);
}

torch::Tensor predict_labels(GreyBox& model, const torch::Tensor& batch) {
  return predict_probs(model, batch).argmax(1);
}

std::vector<ClassProbabilities> predict(GreyBox& model, const std::vector<torch::Tensor>& images) {
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_image(images[i], model.input_shape(), "predict input " + std::to_string(i));
  }
  std::vector<ClassProbabilities> out;
  if (images.empty()) return out;
  auto probs = predict_probs(model, torch::stack(images));
  for (std::int64_t i = 0; i < probs.size(0); ++i) out.push_back(ClassProbabilities::from_tensor(probs[i]));
  return out;
}

Capture capture_batch(GreyBox& model, const torch::Tensor& batch, const std::string& layer,
                      const torch::Tensor& target_classes) {
  model.require_layer(layer);
  check_batch(batch, model.input_shape(), "capture");
  auto targets = target_classes.to(torch::kLong).reshape({-1});
  if (targets.size(0) != batch.size(0)) {
    throw ShapeError("capture: " + std::to_string(targets.size(0)) + " targets for a batch of " +
                     std::to_string(batch.size(0)));
  }
  if ((targets < 0).any().item<bool>() || (targets >= model.num_classes()).any().item<bool>()) {
    throw InvalidRequest("capture: target class outside [0, " + std::to_string(model.num_classes()) + ")");
  }
  torch::AutoGradMode grad_mode(true);
  torch::Tensor act;
  {
    torch::NoGradGuard no_grad;
    act = model.activation(batch, layer);
  }
  act = act.detach().requires_grad_(true);
  auto logits = model.logits_from(act, layer);
  // Samples do not interact, so the gradient of the summed target logits
  // splits into per-sample gradients.
  auto selected = logits.gather(1, targets.unsqueeze(1)).sum();
  auto grads = torch::autograd::grad({selected}, {act}, {}, false, false, true);
  Capture out;
  out.gradients = grads[0].defined() ? grads[0].detach() : torch::zeros_like(act);
  out.activations = act.detach();
  return out;
}

Capture capture(GreyBox& model, const torch::Tensor& x, const std::string& layer,
                LabelId target_class) {
  check_image(x, model.input_shape(), "capture");
  auto c = capture_batch(model, x.unsqueeze(0), layer, torch::tensor({target_class}, torch::kLong));
  return {c.activations.squeeze(0), c.gradients.squeeze(0)};
}

// ---------------------------------------------------------------------------

ConvClassifierImpl::ConvClassifierImpl(ConvClassifierConfig config) : config_(std::move(config)) {
  if (config_.num_classes < 2) throw ConfigError("grey-box needs at least two classes");
  if (config_.channels.empty() || config_.channels.size() != config_.strides.size()) {
    throw ConfigError("grey-box channels and strides must be non-empty and of equal length");
  }
  std::int64_t in = config_.input_shape.channels;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, config_.channels[i], 3)
                                      .stride(config_.strides[i])
                                      .padding(1));
    convs_.push_back(register_module("stage" + std::to_string(i + 1), conv));
    in = config_.channels[i];
  }
  head_ = register_module("head", torch::nn::Linear(in, config_.num_classes));
  require_layer(config_.capture_layer);
}

std::vector<std::string> ConvClassifierImpl::layer_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) names.push_back("stage" + std::to_string(i + 1));
  return names;
}

std::size_t ConvClassifierImpl::stage_index(const std::string& layer) const {
  require_layer(layer);
  return static_cast<std::size_t>(std::stoi(layer.substr(5))) - 1;
}

torch::Tensor ConvClassifierImpl::activation(const torch::Tensor& batch, const std::string& layer) {
  const auto last = stage_index(layer);
  auto h = batch;
  for (std::size_t i = 0; i <= last; ++i) h = torch::relu(convs_[i]->forward(h));
  return h;
}

torch::Tensor ConvClassifierImpl::logits_from(const torch::Tensor& activation, const std::string& layer) {
  auto h = activation;
  for (std::size_t i = stage_index(layer) + 1; i < convs_.size(); ++i) h = torch::relu(convs_[i]->forward(h));
  return head_->forward(h.mean({2, 3}));
}

torch::Tensor ConvClassifierImpl::logits(const torch::Tensor& batch) {
  return head_->forward(features(batch));
}

torch::Tensor ConvClassifierImpl::features(const torch::Tensor& batch) {
  auto h = batch;
  for (auto& conv : convs_) h = torch::relu(conv->forward(h));
  return h.mean({2, 3});
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
  module.eval();
}

// ---------------------------------------------------------------------------

double accuracy(GreyBox& model, const Dataset& data, std::int64_t batch_size) {
  if (!data.labels.defined()) throw ConfigError("accuracy requires labelled data");
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    const auto end = std::min(data.size(), start + batch_size);
    auto pred = predict_labels(model, data.images.slice(0, start, end));
    correct += pred.eq(data.labels.slice(0, start, end)).sum().item<std::int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

torch::Tensor erase_objects(const torch::Tensor& images, const torch::Tensor& masks) {
  auto m = masks.to(images.dtype());
  if (m.dim() == 3) m = m.unsqueeze(1);
  auto keep = 1 - m;
  auto fill = (images * keep).sum({2, 3}, true) / keep.sum({2, 3}, true).clamp_min(1.0);
  return images * keep + fill * m;
}

std::pair<ConvClassifier, GreyBoxHistory> train_greybox(const Dataset& train, const Dataset* val,
                                                         const GreyBoxTrainConfig& config,
                                                         ConvClassifierConfig arch) {
  if (!train.labels.defined() || train.size() == 0) throw ConfigError("grey-box training needs a labelled, non-empty dataset");
  const auto distinct = std::get<0>(at::_unique(train.labels)).numel();
  if (distinct < 2) throw ConfigError("grey-box training needs at least two classes, found " + std::to_string(distinct));
  if (config.epochs < 0 || config.batch_size < 1 || config.learning_rate <= 0) {
    throw ConfigError("invalid grey-box training configuration");
  }
  arch.num_classes = std::max(arch.num_classes, train.num_classes());
  arch.input_shape = train.image_shape();
  arch.seed = config.seed;

  seed_everything(config.seed);
  ConvClassifier model(arch);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(config.seed);
  GreyBoxHistory history;
  const bool erase = train.masks.defined();
  torch::Tensor masks;
  if (erase) {
    masks = F::max_pool2d(train.masks.to(torch::kFloat).unsqueeze(1),
                          F::MaxPool2dFuncOptions(2 * kEraseMargin + 1).stride(1).padding(kEraseMargin));
  }

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    model->train();
    const auto order = epoch_order(train.size(), rng, true);
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + end), torch::kLong);
      auto x = train.images.index_select(0, idx);
      auto y = train.labels.index_select(0, idx);
      optimizer.zero_grad();
      auto loss = torch::cross_entropy_loss(model->logits(x), y);
      if (erase && config.neutral_weight > 0) {
        // Disc-erased copies carry no class evidence, so they are pulled
        // towards the uniform prediction.
        auto neutral = erase_objects(x, masks.index_select(0, idx));
        auto logp = torch::log_softmax(model->logits(neutral), 1);
        loss = loss - config.neutral_weight * logp.mean(1).mean();
      }
      loss.backward();
      optimizer.step();
      loss_sum += loss.item<double>();
      ++batches;
    }
    model->eval();
    history.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::int64_t>(batches, 1)));
    history.train_accuracy.push_back(accuracy(*model, train));
    if (val) history.val_accuracy.push_back(accuracy(*model, *val));
  }
  model->eval();
  return {model, history};
}

void save_greybox(ConvClassifier& model, const std::filesystem::path& descriptor) {
  auto weights = descriptor;
  weights.replace_extension(".pt");
  if (descriptor.has_parent_path()) std::filesystem::create_directories(descriptor.parent_path());
  torch::save(model, weights.string());
  const auto& c = model->config();
  json j{{"kind", "conv_classifier"},
         {"weights", weights.filename().string()},
         {"num_classes", c.num_classes},
         {"input_shape", c.input_shape.dims()},
         {"layers", model->layer_names()},
         {"capture_layer", c.capture_layer},
         {"channels", c.channels},
         {"strides", c.strides},
         {"seed", c.seed}};
  std::ofstream out(descriptor);
  if (!out) throw IoError("cannot write " + descriptor.string());
  out << j.dump(2) << "\n";
}

ConvClassifier load_greybox(const std::filesystem::path& descriptor) {
  std::ifstream in(descriptor);
  if (!in) throw IoError("cannot read grey-box descriptor " + descriptor.string());
  ConvClassifierConfig c;
  std::filesystem::path weights;
  try {
    json j;
    in >> j;
    c.num_classes = j.at("num_classes").get<std::int64_t>();
    const auto dims = j.at("input_shape").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) throw ConfigError("input_shape must have three entries");
    c.input_shape = {dims[0], dims[1], dims[2]};
    c.channels = j.at("channels").get<std::vector<std::int64_t>>();
    c.strides = j.at("strides").get<std::vector<std::int64_t>>();
    c.capture_layer = j.at("capture_layer").get<std::string>();
    c.seed = j.value("seed", std::uint64_t{0});
    weights = descriptor.parent_path() / j.at("weights").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid grey-box descriptor " + descriptor.string() + ": " + e.what());
  }
  if (!std::filesystem::exists(weights)) throw IoError("missing weights file " + weights.string());
  ConvClassifier model(c);
  torch::load(model, weights.string());
  model->eval();
  return model;
}

}  // namespace safe
