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

#include "safe/config.hpp"

#include <fstream>
#include <set>

#include "safe/errors.hpp"

namespace safe {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig apply_config_json(const json& j, RunConfig c) {
  reject_unknown(j,
                 {"learning_rate", "adam_beta1", "adam_beta2", "n_critic", "epochs", "batch_size",
                  "seed", "image_size", "saliency_mode", "classifier_target", "checkpoint_interval",
                  "sample_interval", "track_descent", "lambda_cls", "lambda_gp", "lambda_rec",
                  "lambda_fuse", "include_reconstruction", "generator", "discriminator", "greybox",
                  "data", "val_data", "output_dir"},
                 "");
  auto& t = c.training;
  read(j, "learning_rate", t.learning_rate);
  read(j, "adam_beta1", t.adam_beta1);
  read(j, "adam_beta2", t.adam_beta2);
  read(j, "n_critic", t.n_critic);
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  read(j, "seed", t.seed);
  read(j, "checkpoint_interval", t.checkpoint_interval);
  read(j, "sample_interval", t.sample_interval);
  read(j, "track_descent", t.track_descent);
  read(j, "lambda_cls", t.loss_weights.lambda_cls);
  read(j, "lambda_gp", t.loss_weights.lambda_gp);
  read(j, "lambda_rec", t.loss_weights.lambda_rec);
  read(j, "lambda_fuse", t.loss_weights.lambda_fuse);
  read(j, "include_reconstruction", t.loss_weights.include_reconstruction);
  if (j.contains("image_size")) {
    std::vector<std::int64_t> hw;
    read(j, "image_size", hw);
    if (hw.size() != 2) throw ConfigError("config key 'image_size' must be [H, W]");
    t.image_shape.height = hw[0];
    t.image_shape.width = hw[1];
  }
  if (j.contains("saliency_mode")) {
    std::string mode;
    read(j, "saliency_mode", mode);
    t.saliency_mode = parse_saliency_mode(mode);
  }
  if (j.contains("classifier_target")) {
    std::string target;
    read(j, "classifier_target", target);
    t.classifier_target = parse_classifier_target(target);
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    reject_unknown(g, {"num_masks", "base_channels", "num_downsampling", "num_residual", "background_bias"},
                   "generator.");
    read(g, "num_masks", t.generator.num_masks);
    read(g, "base_channels", t.generator.base_channels);
    read(g, "num_downsampling", t.generator.num_downsampling);
    read(g, "num_residual", t.generator.num_residual);
    read(g, "background_bias", t.generator.background_bias);
  }
  if (j.contains("discriminator")) {
    const auto& d = j.at("discriminator");
    reject_unknown(d, {"base_channels", "num_layers", "leaky_slope"}, "discriminator.");
    read(d, "base_channels", t.discriminator.base_channels);
    read(d, "num_layers", t.discriminator.num_layers);
    read(d, "leaky_slope", t.discriminator.leaky_slope);
  }
  if (j.contains("greybox")) {
    const auto& g = j.at("greybox");
    reject_unknown(g, {"epochs", "learning_rate", "batch_size", "seed", "channels", "strides", "capture_layer", "neutral_weight"},
                   "greybox.");
    read(g, "epochs", c.greybox_training.epochs);
    read(g, "learning_rate", c.greybox_training.learning_rate);
    read(g, "batch_size", c.greybox_training.batch_size);
    read(g, "seed", c.greybox_training.seed);
    read(g, "channels", c.greybox_arch.channels);
    read(g, "strides", c.greybox_arch.strides);
    read(g, "capture_layer", c.greybox_arch.capture_layer);
    read(g, "neutral_weight", c.greybox_training.neutral_weight);
  }
  std::string path;
  if (j.contains("data")) { read(j, "data", path); c.data = path; }
  if (j.contains("val_data")) { read(j, "val_data", path); c.val_data = path; }
  if (j.contains("output_dir")) { read(j, "output_dir", path); c.output_dir = path; }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
  return apply_config_json(j, std::move(base));
}

json to_json(const RunConfig& c) {
  const auto& t = c.training;
  json j{{"learning_rate", t.learning_rate},
         {"adam_beta1", t.adam_beta1},
         {"adam_beta2", t.adam_beta2},
         {"n_critic", t.n_critic},
         {"epochs", t.epochs},
         {"batch_size", t.batch_size},
         {"seed", t.seed},
         {"image_size", {t.image_shape.height, t.image_shape.width}},
         {"saliency_mode", to_string(t.saliency_mode)},
         {"classifier_target", to_string(t.classifier_target)},
         {"checkpoint_interval", t.checkpoint_interval},
         {"sample_interval", t.sample_interval},
         {"track_descent", t.track_descent},
         {"lambda_cls", t.loss_weights.lambda_cls},
         {"lambda_gp", t.loss_weights.lambda_gp},
         {"lambda_rec", t.loss_weights.lambda_rec},
         {"lambda_fuse", t.loss_weights.lambda_fuse},
         {"include_reconstruction", t.loss_weights.include_reconstruction},
         {"generator",
          {{"num_masks", t.generator.num_masks},
           {"base_channels", t.generator.base_channels},
           {"num_downsampling", t.generator.num_downsampling},
           {"num_residual", t.generator.num_residual},
           {"background_bias", t.generator.background_bias}}},
         {"discriminator",
          {{"base_channels", t.discriminator.base_channels},
           {"num_layers", t.discriminator.num_layers},
           {"leaky_slope", t.discriminator.leaky_slope}}},
         {"greybox",
          {{"epochs", c.greybox_training.epochs},
           {"learning_rate", c.greybox_training.learning_rate},
           {"batch_size", c.greybox_training.batch_size},
           {"seed", c.greybox_training.seed},
           {"channels", c.greybox_arch.channels},
           {"strides", c.greybox_arch.strides},
           {"capture_layer", c.greybox_arch.capture_layer},
           {"neutral_weight", c.greybox_training.neutral_weight}}}};
  if (c.data) j["data"] = c.data->string();
  if (c.val_data) j["val_data"] = c.val_data->string();
  if (c.output_dir) j["output_dir"] = c.output_dir->string();
  return j;
}

}  // namespace safe
