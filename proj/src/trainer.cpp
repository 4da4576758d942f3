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

#include "safe/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "safe/errors.hpp"

namespace safe {

ClassifierTarget parse_classifier_target(const std::string& name) {
  if (name == "target") return ClassifierTarget::TargetLabel;
  if (name == "greybox") return ClassifierTarget::GreyBoxLabel;
  throw ConfigError("unknown classifier target '" + name + "' (expected target or greybox)");
}

std::string to_string(ClassifierTarget target) {
  return target == ClassifierTarget::TargetLabel ? "target" : "greybox";
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (checkpoint_interval < 0 || sample_interval < 0) throw ConfigError("intervals must be >= 0");
  loss_weights.validate();
}

Trainer::Trainer(TrainingConfig config, GreyBox& greybox)
    : config_(std::move(config)), greybox_(greybox) {
  config_.validate();
  if (!(greybox_.input_shape() == config_.image_shape)) {
    throw ConfigError("grey-box input shape " + shape_string(greybox_.input_shape()) +
                      " differs from the training image shape " + shape_string(config_.image_shape));
  }
  config_.generator.image_shape = config_.image_shape;
  config_.generator.num_classes = greybox_.num_classes();
  config_.discriminator.image_shape = config_.image_shape;
  config_.discriminator.num_classes = greybox_.num_classes();

  seed_everything(config_.seed);
  state_.generator = Generator(config_.generator);
  state_.discriminator = Discriminator(config_.discriminator);
  auto adam = [&] {
    return torch::optim::AdamOptions(config_.learning_rate)
        .betas(std::make_tuple(config_.adam_beta1, config_.adam_beta2));
  };
  state_.generator_optimizer =
      std::make_unique<torch::optim::Adam>(state_.generator->parameters(), adam());
  state_.discriminator_optimizer =
      std::make_unique<torch::optim::Adam>(state_.discriminator->parameters(), adam());
  alpha_generator_ = at::make_generator<at::CPUGeneratorImpl>(config_.seed + 1);
  target_generator_ = at::make_generator<at::CPUGeneratorImpl>(config_.seed + 2);
}

TrainingBatch Trainer::prepare_batch(const torch::Tensor& images) {
  check_batch(images, config_.image_shape, "training batch");
  TrainingBatch b;
  b.images = images;
  b.labels = predict_labels(greybox_, images);
  b.targets = counterfactual_targets(b.labels, greybox_.num_classes(), target_generator_);
  b.saliency = saliency_for_training_batch(greybox_, images, b.labels, b.targets, config_.saliency_mode)
                   .unsqueeze(1);
  return b;
}

torch::Tensor Trainer::sample_alpha(std::int64_t n) {
  // Uniform on [0, 1); an exact 0 is pushed into the open interval.
  auto a = torch::rand({n}, alpha_generator_);
  return a.clamp_min(1e-6);
}

DiscriminatorTerms<torch::Tensor> Trainer::discriminator_terms(const TrainingBatch& batch,
                                                               const torch::Tensor& fake,
                                                               const torch::Tensor& alpha) {
  auto& d = state_.discriminator;
  auto [src_real, cls_logits] = d->forward(batch.images);
  auto src_fake = d->src(fake);
  auto [loss_real, loss_fake] = adversarial_d(src_real, src_fake);
  auto cls_real = classification_loss(torch::softmax(cls_logits, 1), batch.labels);
  auto x_hat = interpolate(batch.images, fake, alpha).x_hat;
  auto gp = gradient_penalty(d, x_hat);
  return {loss_real, loss_fake, cls_real, gp};
}

LossBundle Trainer::discriminator_step(const TrainingBatch& batch, std::optional<torch::Tensor> alpha) {
  if (state_.critic_counter >= config_.n_critic) {
    throw ConfigError("discriminator_step called while a generator step is due");
  }
  const auto n = batch.images.size(0);
  auto a = alpha ? alpha->to(torch::kFloat).reshape({-1}) : sample_alpha(n);
  if (a.size(0) != n) throw ShapeError("discriminator_step: one alpha per batch element required");

  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = state_.generator->forward(batch.images, batch.saliency, batch.targets).image;
  }
  auto terms = discriminator_terms(batch, fake, a);

  LossBundle out;
  out.loss_real = terms.loss_real.item<double>();
  out.loss_fake = terms.loss_fake.item<double>();
  out.adv_d = out.loss_real - out.loss_fake;
  out.cls_real = terms.cls_real.item<double>();
  out.gp = terms.gp.item<double>();
  out.total_d = total_d(DiscriminatorTerms<double>{out.loss_real, out.loss_fake, out.cls_real, out.gp},
                        config_.loss_weights);

  auto loss = total_d(terms, config_.loss_weights);
  auto params = state_.discriminator->parameters();
  auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].mutable_grad() = grads[i].defined() ? grads[i] : torch::zeros_like(params[i]);
  }
  state_.discriminator_optimizer->step();
  state_.discriminator_optimizer->zero_grad();
  state_.last_gp = out.gp;
  ++state_.critic_counter;
  ++state_.history.discriminator_updates;

  std::optional<double> after;
  if (config_.track_descent) {
    auto post = discriminator_terms(batch, fake, a);
    after = total_d(post, config_.loss_weights).item<double>();
  }
  record(StepKind::Discriminator, out, after);
  return out;
}

GeneratorTerms<torch::Tensor> Trainer::generator_terms(const TrainingBatch& batch) {
  auto& g = state_.generator;
  auto& d = state_.discriminator;
  auto fwd = g->forward(batch.images, batch.saliency, batch.targets);
  auto [src_fake, cls_logits] = d->forward(fwd.image);
  torch::Tensor cls_labels = batch.targets;
  if (config_.classifier_target == ClassifierTarget::GreyBoxLabel) {
    cls_labels = predict_labels(greybox_, fwd.image.detach());
  }
  auto cls_fake = classification_loss(torch::softmax(cls_logits, 1), cls_labels);
  auto rec_out = g->forward(fwd.image, fwd.saliency, batch.labels);
  auto rec = reconstruction_loss(batch.images, batch.saliency, rec_out.image, rec_out.saliency);
  auto fuse = fuse_loss(batch.images, fwd.image, batch.saliency);
  auto gp = torch::scalar_tensor(state_.last_gp);
  return {src_fake.mean(), cls_fake, gp, rec, fuse};
}

LossBundle Trainer::generator_step(const TrainingBatch& batch) {
  if (state_.critic_counter != config_.n_critic) {
    throw ConfigError("generator_step requires " + std::to_string(config_.n_critic) +
                      " discriminator steps since the last generator step, have " +
                      std::to_string(state_.critic_counter));
  }
  auto terms = generator_terms(batch);
  LossBundle out;
  out.adv_g = terms.adv_g.item<double>();
  out.cls_fake = terms.cls_fake.item<double>();
  out.gp = terms.gp.item<double>();
  out.rec = terms.rec.item<double>();
  out.fuse = terms.fuse.item<double>();
  out.total_g = total_g(GeneratorTerms<double>{out.adv_g, out.cls_fake, out.gp, out.rec, out.fuse},
                        config_.loss_weights);

  auto loss = total_g(terms, config_.loss_weights);
  auto params = state_.generator->parameters();
  auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].mutable_grad() = grads[i].defined() ? grads[i] : torch::zeros_like(params[i]);
  }
  state_.generator_optimizer->step();
  state_.generator_optimizer->zero_grad();
  state_.critic_counter = 0;
  ++state_.history.generator_updates;
  record(StepKind::Generator, out);
  return out;
}

void Trainer::record(StepKind kind, const LossBundle& losses, std::optional<double> after) {
  StepRecord r;
  r.step = ++state_.step;
  r.epoch = state_.epoch;
  r.kind = kind;
  r.losses = losses;
  r.total_d_after = after;
  state_.history.steps.push_back(r);
  if (loss_log_.is_open()) loss_log_ << loss_csv_row(r) << "\n" << std::flush;
}

void Trainer::save_checkpoint(const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  save_generator(state_.generator, directory / "generator.json");
  save_discriminator(state_.discriminator, directory / "discriminator.json");
}

void Trainer::write_samples(const TrainingBatch& batch, const std::filesystem::path& path) {
  torch::NoGradGuard no_grad;
  const auto n = std::min<std::int64_t>(4, batch.images.size(0));
  auto out = state_.generator->forward(batch.images.narrow(0, 0, n), batch.saliency.narrow(0, 0, n),
                                       batch.targets.narrow(0, 0, n));
  std::vector<GridRow> rows;
  for (std::int64_t i = 0; i < n; ++i) {
    rows.push_back({batch.images[i], batch.saliency[i][0], out.image[i]});
  }
  save_grid(rows, path);
}

TrainingHistory Trainer::train(const Dataset& dataset) {
  if (dataset.size() == 0) throw ConfigError("training dataset is empty");
  check_batch(dataset.images, config_.image_shape, "training dataset");

  const bool writes = !config_.output_dir.empty();
  if (writes) {
    std::filesystem::create_directories(config_.output_dir);
    loss_log_.open(config_.output_dir / "losses.csv");
    if (!loss_log_) throw IoError("cannot write " + (config_.output_dir / "losses.csv").string());
    loss_log_ << loss_csv_header() << "\n";
  }

  // The grey-box is frozen, so labels are computed once. Saliency maps are
  // cached as well unless the target label enters them and is resampled.
  const auto n = dataset.size();
  const bool cache_saliency =
      config_.saliency_mode == SaliencyMode::Current || greybox_.num_classes() == 2;
  torch::Tensor labels = torch::empty({n}, torch::kLong);
  torch::Tensor saliency;
  {
    constexpr std::int64_t chunk = 64;
    std::vector<torch::Tensor> maps;
    for (std::int64_t start = 0; start < n; start += chunk) {
      const auto len = std::min(chunk, n - start);
      auto b = prepare_batch(dataset.images.narrow(0, start, len));
      labels.narrow(0, start, len).copy_(b.labels);
      if (cache_saliency) maps.push_back(b.saliency);
    }
    if (cache_saliency) saliency = torch::cat(maps);
  }

  std::mt19937_64 rng(config_.seed);
  std::optional<TrainingBatch> sample_batch;
  for (std::int64_t epoch = 0; epoch < config_.epochs; ++epoch) {
    state_.epoch = epoch + 1;
    double rec_sum = 0.0;
    std::int64_t rec_count = 0;
    const auto order = epoch_order(n, rng, true);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + end), torch::kLong);
      TrainingBatch batch;
      batch.images = dataset.images.index_select(0, idx);
      batch.labels = labels.index_select(0, idx);
      batch.targets = counterfactual_targets(batch.labels, greybox_.num_classes(), target_generator_);
      batch.saliency = cache_saliency
                           ? saliency.index_select(0, idx)
                           : saliency_for_training_batch(greybox_, batch.images, batch.labels,
                                                         batch.targets, config_.saliency_mode)
                                 .unsqueeze(1);
      if (!sample_batch) sample_batch = batch;

      discriminator_step(batch);
      if (state_.critic_counter == config_.n_critic) {
        const auto g = generator_step(batch);
        rec_sum += g.rec;
        ++rec_count;
      }
      if (writes && config_.checkpoint_interval > 0 && state_.step % config_.checkpoint_interval == 0) {
        save_checkpoint(config_.output_dir / "checkpoints");
      }
      if (writes && config_.sample_interval > 0 && state_.step % config_.sample_interval == 0) {
        std::ostringstream name;
        name << "step_" << std::setw(7) << std::setfill('0') << state_.step << ".png";
        write_samples(*sample_batch, config_.output_dir / "samples" / name.str());
      }
    }
    state_.history.epoch_mean_rec.push_back(rec_count ? rec_sum / static_cast<double>(rec_count)
                                                      : std::nan(""));
  }
  if (writes) {
    save_checkpoint(config_.output_dir);
    loss_log_.close();
  }
  return state_.history;
}

std::string loss_csv_header() {
  return "step,epoch,kind,loss_real,loss_fake,adv_d,gp,cls_real,total_d,adv_g,cls_fake,rec,fuse,total_g";
}

std::string loss_csv_row(const StepRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << "," << r.epoch << ","
     << (r.kind == StepKind::Discriminator ? "D" : "G");
  const auto& l = r.losses;
  for (double v : {l.loss_real, l.loss_fake, l.adv_d, l.gp, l.cls_real, l.total_d, l.adv_g,
                   l.cls_fake, l.rec, l.fuse, l.total_g}) {
    os << "," << v;
  }
  return os.str();
}

}  // namespace safe
