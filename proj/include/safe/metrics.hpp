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

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "safe/data.hpp"
#include "safe/greybox.hpp"
#include "safe/models.hpp"
#include "safe/saliency.hpp"

namespace safe {

/// A query image and its counterfactual. target_label differs from
/// query_label; achieved_label is the grey-box prediction on the
/// counterfactual.
struct CFPair {
  std::string id;
  torch::Tensor query;           // (C, H, W)
  torch::Tensor counterfactual;  // (C, H, W)
  LabelId query_label = 0;
  LabelId target_label = 1;
  LabelId achieved_label = 0;
};

/// Default change threshold for sparsity, on the [0, 1] intensity scale.
inline constexpr double kSparsityThreshold = 0.05;

/// Fraction of pairs whose counterfactual reaches the target label.
double validity(const std::vector<CFPair>& pairs);
/// Mean over pairs of the mean absolute per-element change.
double proximity(const std::vector<CFPair>& pairs);
/// Mean over pairs of the fraction of pixels whose max-over-channels change
/// exceeds `tau`.
double sparsity(const std::vector<CFPair>& pairs, double tau = kSparsityThreshold);

double pair_proximity(const CFPair& pair);
double pair_sparsity(const CFPair& pair, double tau = kSparsityThreshold);

/// Feature sets hold one sample per row.
using FeatureMatrix = Eigen::MatrixXd;

/// Frechet distance between Gaussian fits of two feature sets. The trace of
/// (S_r S_f)^{1/2} is taken from the eigenvalues of the symmetric matrix
/// S_r^{1/2} S_f S_r^{1/2}, with negative eigenvalues clamped to zero.
double fid(const FeatureMatrix& real, const FeatureMatrix& fake);

/// Unbiased MMD^2 with kernel k(a, b) = (a.b / dim + 1)^3. For equally sized
/// sets the cross term also skips i == j pairs (the paired U-statistic),
/// so kid(S, S) is exactly zero.
double kid(const FeatureMatrix& real, const FeatureMatrix& fake);

/// exp(mean KL(p(y|x) || p(y))) with p(y) the mean of the conditionals.
double inception_score(const std::vector<ClassProbabilities>& class_probs);

struct MetricsReport {
  double validity = 0.0;
  double proximity = 0.0;
  double sparsity = 0.0;
  double fid = 0.0;
  double kid = 0.0;
  double inception_score = 1.0;
  std::int64_t n_pairs = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  /// Element-wise mean of several reports (n_pairs is summed).
  static MetricsReport mean(const std::vector<MetricsReport>& reports);
};

/// Feature extractor backing FID/KID and the classifier backing IS.
struct EmbeddingProvider {
  std::function<torch::Tensor(const torch::Tensor&)> features;     // (N, C, H, W) -> (N, k)
  std::function<torch::Tensor(const torch::Tensor&)> class_probs;  // (N, C, H, W) -> (N, d)
  /// Optional learned perceptual distance between two batches, (N) per pair.
  std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)> perceptual_distance;
};

/// Penultimate features and softmax outputs of a grey-box model.
EmbeddingProvider greybox_embedding(GreyBox& model);

/// Anything that turns (images, saliency, targets) into counterfactual images.
class Explainer {
 public:
  virtual ~Explainer() = default;
  virtual torch::Tensor explain(const torch::Tensor& images, const torch::Tensor& saliency,
                                const torch::Tensor& targets) = 0;
};

class GeneratorExplainer : public Explainer {
 public:
  explicit GeneratorExplainer(Generator generator) : generator_(std::move(generator)) {}
  torch::Tensor explain(const torch::Tensor& images, const torch::Tensor& saliency,
                        const torch::Tensor& targets) override;

 private:
  Generator generator_;
};

/// Returns the query unchanged.
class IdentityExplainer : public Explainer {
 public:
  torch::Tensor explain(const torch::Tensor& images, const torch::Tensor&, const torch::Tensor&) override {
    return images.clone();
  }
};

struct EvaluationOptions {
  std::uint64_t seed = 0;
  double sparsity_tau = kSparsityThreshold;
  std::int64_t batch_size = 64;
  SaliencyMode saliency_mode = SaliencyMode::Current;
};

struct PairRecord {
  std::string id;
  LabelId query_label = 0;
  LabelId target_label = 0;
  LabelId achieved_label = 0;
  double proximity = 0.0;
  double sparsity = 0.0;
};

struct Evaluation {
  MetricsReport report;
  std::vector<CFPair> pairs;
  std::vector<PairRecord> records;
  /// Saliency maps (N, H, W) the explainer was given.
  torch::Tensor saliency;
};

/// One counterfactual per image (target = complement for two classes, else a
/// seeded uniform draw among the other classes), then every metric.
Evaluation evaluate(Explainer& explainer, GreyBox& greybox, const Dataset& dataset,
                    const EmbeddingProvider& embedding, const EvaluationOptions& options = {});

void write_report_json(const std::filesystem::path& path, const nlohmann::json& report);
void write_pairs_csv(const std::filesystem::path& path, const std::vector<PairRecord>& records);

}  // namespace safe
