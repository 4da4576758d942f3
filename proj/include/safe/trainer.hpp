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
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "safe/data.hpp"
#include "safe/greybox.hpp"
#include "safe/losses.hpp"
#include "safe/models.hpp"
#include "safe/saliency.hpp"

namespace safe {

/// Which label the generator's class term asks D_cls to predict for x'.
/// TargetLabel uses y'; GreyBoxLabel uses the grey-box prediction M(x').
enum class ClassifierTarget { TargetLabel, GreyBoxLabel };

ClassifierTarget parse_classifier_target(const std::string& name);
std::string to_string(ClassifierTarget target);

struct TrainingConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::int64_t n_critic = 5;
  std::int64_t epochs = 10;
  std::int64_t batch_size = 16;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  ImageShape image_shape{3, 64, 64};
  SaliencyMode saliency_mode = SaliencyMode::Current;
  ClassifierTarget classifier_target = ClassifierTarget::TargetLabel;
  /// Steps between checkpoints; 0 disables periodic checkpoints.
  std::int64_t checkpoint_interval = 0;
  /// Steps between sample grids; 0 disables them.
  std::int64_t sample_interval = 0;
  /// Re-evaluates the discriminator objective after every update to record
  /// whether the step descended (costs one extra forward pass).
  bool track_descent = false;
  /// Where checkpoints, the loss CSV and sample grids go; empty writes nothing.
  std::filesystem::path output_dir;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

/// A batch with everything the training step needs precomputed. `labels` are
/// grey-box predictions, `targets` the counterfactual labels.
struct TrainingBatch {
  torch::Tensor images;    // (N, C, H, W)
  torch::Tensor labels;    // (N)
  torch::Tensor targets;   // (N)
  torch::Tensor saliency;  // (N, 1, H, W)
};

enum class StepKind { Discriminator, Generator };

struct StepRecord {
  std::int64_t step = 0;  // 1-based over all recorded steps
  std::int64_t epoch = 0;
  StepKind kind = StepKind::Discriminator;
  LossBundle losses;
  /// total_d re-evaluated after the update on the same batch and alpha;
  /// set only when track_descent is on.
  std::optional<double> total_d_after;
};

struct TrainingHistory {
  std::vector<StepRecord> steps;
  std::int64_t discriminator_updates = 0;
  std::int64_t generator_updates = 0;
  std::vector<double> epoch_mean_rec;  // mean rec over generator steps, per epoch
};

struct TrainingState {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  std::unique_ptr<torch::optim::Adam> generator_optimizer;
  std::unique_ptr<torch::optim::Adam> discriminator_optimizer;
  /// Discriminator updates since the last generator update.
  std::int64_t critic_counter = 0;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  /// gp of the latest discriminator step; enters total_g as a constant.
  double last_gp = 0.0;
  TrainingHistory history;
};

/// Alternating discriminator/generator optimisation: every batch updates the
/// discriminator, and every n_critic-th discriminator update is followed by
/// one generator update. The grey-box model is only read.
class Trainer {
 public:
  Trainer(TrainingConfig config, GreyBox& greybox);

  /// Grey-box labels, counterfactual targets and saliency maps for `images`.
  TrainingBatch prepare_batch(const torch::Tensor& images);

  /// One discriminator update. `alpha` (N) fixes the interpolation weights;
  /// otherwise they are drawn uniformly from (0, 1).
  LossBundle discriminator_step(const TrainingBatch& batch, std::optional<torch::Tensor> alpha = {});

  /// One generator update. Requires critic_counter == n_critic; resets it.
  LossBundle generator_step(const TrainingBatch& batch);

  /// Runs config.epochs epochs. Writes the loss CSV, checkpoints and sample
  /// grids when an output directory is configured. On a non-finite loss the
  /// latest periodic checkpoint is left in place and NumericalError is thrown.
  TrainingHistory train(const Dataset& dataset);

  /// Discriminator components on `batch` against the given fake images.
  DiscriminatorTerms<torch::Tensor> discriminator_terms(const TrainingBatch& batch,
                                                        const torch::Tensor& fake,
                                                        const torch::Tensor& alpha);
  /// Generator components with the graph attached to the generator parameters.
  GeneratorTerms<torch::Tensor> generator_terms(const TrainingBatch& batch);

  void save_checkpoint(const std::filesystem::path& directory);

  TrainingState& state() { return state_; }
  const TrainingConfig& config() const { return config_; }
  Generator& generator() { return state_.generator; }
  Discriminator& discriminator() { return state_.discriminator; }

 private:
  torch::Tensor sample_alpha(std::int64_t n);
  void record(StepKind kind, const LossBundle& losses, std::optional<double> after = {});
  void write_samples(const TrainingBatch& batch, const std::filesystem::path& path);

  TrainingConfig config_;
  GreyBox& greybox_;
  TrainingState state_;
  torch::Generator alpha_generator_;
  torch::Generator target_generator_;
  std::ofstream loss_log_;
};

/// Loss CSV header and row formatting.
std::string loss_csv_header();
std::string loss_csv_row(const StepRecord& record);

}  // namespace safe
