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

#include "safe/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "safe/errors.hpp"

namespace safe {

using nlohmann::json;

namespace {

void require_pairs(const std::vector<CFPair>& pairs, const char* metric) {
  if (pairs.empty()) throw UndefinedMetric(std::string(metric) + " is undefined for zero pairs");
}

void require_features(const FeatureMatrix& real, const FeatureMatrix& fake, const char* metric) {
  if (real.cols() != fake.cols()) {
    throw ShapeError(std::string(metric) + ": feature dimensions " + std::to_string(real.cols()) +
                     " and " + std::to_string(fake.cols()) + " differ");
  }
  if (real.rows() < 2 || fake.rows() < 2) {
    throw UndefinedMetric(std::string(metric) + " needs at least two samples per set");
  }
}

Eigen::MatrixXd covariance(const FeatureMatrix& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

torch::Tensor abs_change(const CFPair& pair) {
  if (!pair.query.sizes().equals(pair.counterfactual.sizes())) {
    throw ShapeError("CF pair '" + pair.id + "': query " + shape_string(pair.query.sizes()) +
                     " vs counterfactual " + shape_string(pair.counterfactual.sizes()));
  }
  return (pair.query.to(torch::kDouble) - pair.counterfactual.to(torch::kDouble)).abs();
}

FeatureMatrix to_matrix(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kDouble).contiguous();
  FeatureMatrix m(d.size(0), d.size(1));
  const double* p = d.data_ptr<double>();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p[r * m.cols() + c];
  return m;
}

}  // namespace

double validity(const std::vector<CFPair>& pairs) {
  require_pairs(pairs, "validity");
  std::int64_t hits = 0;
  for (const auto& p : pairs) hits += p.achieved_label == p.target_label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double pair_proximity(const CFPair& pair) { return abs_change(pair).mean().item<double>(); }

double pair_sparsity(const CFPair& pair, double tau) {
  if (!(tau > 0)) throw ConfigError("sparsity threshold must be > 0");
  auto per_pixel = std::get<0>(abs_change(pair).max(0));
  return (per_pixel > tau).to(torch::kDouble).mean().item<double>();
}

double proximity(const std::vector<CFPair>& pairs) {
  require_pairs(pairs, "proximity");
  double sum = 0.0;
  for (const auto& p : pairs) sum += pair_proximity(p);
  return sum / static_cast<double>(pairs.size());
}

double sparsity(const std::vector<CFPair>& pairs, double tau) {
  require_pairs(pairs, "sparsity");
  double sum = 0.0;
  for (const auto& p : pairs) sum += pair_sparsity(p, tau);
  return sum / static_cast<double>(pairs.size());
}

double fid(const FeatureMatrix& real, const FeatureMatrix& fake) {
  require_features(real, fake, "fid");
  const Eigen::RowVectorXd mu_r = real.colwise().mean();
  const Eigen::RowVectorXd mu_f = fake.colwise().mean();
  const Eigen::MatrixXd cov_r = covariance(real, mu_r);
  const Eigen::MatrixXd cov_f = covariance(fake, mu_f);
  const Eigen::MatrixXd root_r = psd_sqrt(cov_r);
  const Eigen::MatrixXd middle = root_r * cov_f * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (middle + middle.transpose()),
                                                     Eigen::EigenvaluesOnly);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_r - mu_f).squaredNorm() + cov_r.trace() + cov_f.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double kid(const FeatureMatrix& real, const FeatureMatrix& fake) {
  require_features(real, fake, "kid");
  const double dim = static_cast<double>(real.cols());
  auto kernel = [dim](const FeatureMatrix& a, const FeatureMatrix& b) -> Eigen::MatrixXd {
    return ((a * b.transpose()).array() / dim + 1.0).cube().matrix();
  };
  const Eigen::MatrixXd k_rr = kernel(real, real);
  const Eigen::MatrixXd k_ff = kernel(fake, fake);
  const Eigen::MatrixXd k_rf = kernel(real, fake);
  const double m = static_cast<double>(real.rows());
  const double n = static_cast<double>(fake.rows());
  const double rr = (k_rr.sum() - k_rr.trace()) / (m * (m - 1));
  const double ff = (k_ff.sum() - k_ff.trace()) / (n * (n - 1));
  const double rf = real.rows() == fake.rows() ? (k_rf.sum() - k_rf.trace()) / (m * (m - 1))
                                               : k_rf.sum() / (m * n);
  return rr + ff - 2.0 * rf;
}

double inception_score(const std::vector<ClassProbabilities>& class_probs) {
  if (class_probs.empty()) throw UndefinedMetric("inception score is undefined for zero samples");
  const auto d = class_probs.front().probs.size();
  std::vector<double> marginal(d, 0.0);
  for (const auto& p : class_probs) {
    if (p.probs.size() != d) throw ShapeError("inception_score: inconsistent class counts");
    for (std::size_t k = 0; k < d; ++k) marginal[k] += p.probs[k];
  }
  for (auto& v : marginal) v /= static_cast<double>(class_probs.size());
  double kl_sum = 0.0;
  for (const auto& p : class_probs) {
    for (std::size_t k = 0; k < d; ++k) {
      if (p.probs[k] > 0) kl_sum += p.probs[k] * (std::log(p.probs[k]) - std::log(marginal[k]));
    }
  }
  return std::exp(kl_sum / static_cast<double>(class_probs.size()));
}

// ---------------------------------------------------------------------------

json MetricsReport::to_json() const {
  return {{"validity", validity}, {"proximity", proximity}, {"sparsity", sparsity}, {"fid", fid},
          {"kid", kid},           {"inception_score", inception_score},           {"n_pairs", n_pairs}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.validity = j.at("validity").get<double>();
  r.proximity = j.at("proximity").get<double>();
  r.sparsity = j.at("sparsity").get<double>();
  r.fid = j.at("fid").get<double>();
  r.kid = j.at("kid").get<double>();
  r.inception_score = j.at("inception_score").get<double>();
  r.n_pairs = j.at("n_pairs").get<std::int64_t>();
  return r;
}

MetricsReport MetricsReport::mean(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw UndefinedMetric("mean of zero reports");
  MetricsReport m{0, 0, 0, 0, 0, 0, 0};
  for (const auto& r : reports) {
    m.validity += r.validity;
    m.proximity += r.proximity;
    m.sparsity += r.sparsity;
    m.fid += r.fid;
    m.kid += r.kid;
    m.inception_score += r.inception_score;
    m.n_pairs += r.n_pairs;
  }
  const double k = static_cast<double>(reports.size());
  m.validity /= k;
  m.proximity /= k;
  m.sparsity /= k;
  m.fid /= k;
  m.kid /= k;
  m.inception_score /= k;
  return m;
}

EmbeddingProvider greybox_embedding(GreyBox& model) {
  EmbeddingProvider e;
  e.features = [&model](const torch::Tensor& batch) {
    torch::NoGradGuard no_grad;
    return model.features(batch);
  };
  e.class_probs = [&model](const torch::Tensor& batch) { return predict_probs(model, batch); };
  return e;
}

torch::Tensor GeneratorExplainer::explain(const torch::Tensor& images, const torch::Tensor& saliency,
                                          const torch::Tensor& targets) {
  torch::NoGradGuard no_grad;
  return generator_->forward(images, saliency, targets).image;
}

Evaluation evaluate(Explainer& explainer, GreyBox& greybox, const Dataset& dataset,
                    const EmbeddingProvider& embedding, const EvaluationOptions& options) {
  if (dataset.size() == 0) throw UndefinedMetric("evaluation set is empty");
  if (options.batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
  auto generator = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  Evaluation ev;
  std::vector<torch::Tensor> real_features, fake_features, saliency;
  std::vector<ClassProbabilities> fake_probs;

  for (std::int64_t start = 0; start < dataset.size(); start += options.batch_size) {
    const auto len = std::min(options.batch_size, dataset.size() - start);
    auto x = dataset.images.narrow(0, start, len);
    auto y = predict_labels(greybox, x);
    auto target = counterfactual_targets(y, greybox.num_classes(), generator);
    auto s = saliency_for_training_batch(greybox, x, y, target, options.saliency_mode);
    auto x_cf = explainer.explain(x, s.unsqueeze(1), target).detach();
    auto achieved = predict_labels(greybox, x_cf);
    saliency.push_back(s);
    real_features.push_back(embedding.features(x));
    fake_features.push_back(embedding.features(x_cf));
    auto probs = embedding.class_probs(x_cf);
    for (std::int64_t i = 0; i < len; ++i) {
      CFPair pair;
      pair.id = dataset.ids[static_cast<std::size_t>(start + i)];
      pair.query = x[i];
      pair.counterfactual = x_cf[i];
      pair.query_label = y[i].item<LabelId>();
      pair.target_label = target[i].item<LabelId>();
      pair.achieved_label = achieved[i].item<LabelId>();
      ev.records.push_back({pair.id, pair.query_label, pair.target_label, pair.achieved_label,
                            pair_proximity(pair), pair_sparsity(pair, options.sparsity_tau)});
      ev.pairs.push_back(std::move(pair));
      fake_probs.push_back(ClassProbabilities::from_tensor(probs[i]));
    }
  }

  auto& r = ev.report;
  r.n_pairs = static_cast<std::int64_t>(ev.pairs.size());
  r.validity = validity(ev.pairs);
  r.proximity = proximity(ev.pairs);
  r.sparsity = sparsity(ev.pairs, options.sparsity_tau);
  const auto real = to_matrix(torch::cat(real_features));
  const auto fake = to_matrix(torch::cat(fake_features));
  if (real.rows() >= 2) {
    r.fid = fid(real, fake);
    r.kid = kid(real, fake);
  }
  r.inception_score = inception_score(fake_probs);
  ev.saliency = torch::cat(saliency);
  return ev;
}

void write_report_json(const std::filesystem::path& path, const json& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.dump(2) << "\n";
}

void write_pairs_csv(const std::filesystem::path& path, const std::vector<PairRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,query_label,target_label,achieved_label,proximity,sparsity\n" << std::setprecision(9);
  for (const auto& r : records) {
    out << r.id << "," << r.query_label << "," << r.target_label << "," << r.achieved_label << ","
        << r.proximity << "," << r.sparsity << "\n";
  }
}

}  // namespace safe
