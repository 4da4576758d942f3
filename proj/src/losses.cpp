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

#include "safe/losses.hpp"

namespace safe {

void LossWeights::validate() const {
  if (lambda_cls < 0 || lambda_gp < 0 || lambda_rec < 0 || lambda_fuse < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ShapeError(std::string(what) + ": shapes " + shape_string(a.sizes()) + " and " +
                     shape_string(b.sizes()) + " differ");
  }
}

}  // namespace

torch::Tensor saliency_for(const torch::Tensor& s, const torch::Tensor& image) {
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  if (s.size(-2) != h || s.size(-1) != w) {
    throw ShapeError("saliency " + shape_string(s.sizes()) + " does not match image " +
                     shape_string(image.sizes()));
  }
  if (image.dim() == 3) {
    if (s.dim() == 2) return s.unsqueeze(0);
    if (s.dim() == 3 && s.size(0) == 1) return s;
  } else if (image.dim() == 4) {
    if (s.dim() == 3 && s.size(0) == image.size(0)) return s.unsqueeze(1);
    if (s.dim() == 4 && s.size(0) == image.size(0) && s.size(1) == 1) return s;
    if (s.dim() == 2) return s.view({1, 1, h, w});
  }
  throw ShapeError("saliency " + shape_string(s.sizes()) + " cannot broadcast against image " +
                   shape_string(image.sizes()));
}

InterpolationSample interpolate(const torch::Tensor& x, const torch::Tensor& x_cf,
                                const torch::Tensor& alpha) {
  require_same_shape(x, x_cf, "interpolate");
  auto a = alpha.to(x.dtype());
  if (a.dim() == 1 && x.dim() >= 2) {
    if (a.size(0) != x.size(0)) throw ShapeError("interpolate: one alpha per batch element required");
    std::vector<std::int64_t> view(static_cast<std::size_t>(x.dim()), 1);
    view[0] = a.size(0);
    a = a.view(view);
  } else if (a.dim() != 0) {
    throw ShapeError("interpolate: alpha must be a scalar or (N)");
  }
  return {alpha, a * x + (1 - a) * x_cf};
}

InterpolationSample interpolate(const torch::Tensor& x, const torch::Tensor& x_cf, double alpha) {
  return interpolate(x, x_cf, torch::scalar_tensor(alpha, x.dtype()));
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_hat) {
  torch::AutoGradMode grad_mode(true);
  auto input = x_hat.detach().requires_grad_(true);
  auto scores = critic(input);
  // A critic that ignores its input has no graph back to it.
  torch::Tensor g;
  if (scores.requires_grad()) {
    g = torch::autograd::grad({scores.sum()}, {input}, {}, true, true, true)[0];
  }
  if (!g.defined()) g = torch::zeros_like(input);
  check_finite(g.detach(), "critic input gradient");
  auto norms = g.reshape({g.size(0), -1}).norm(2, 1);
  return (norms - 1).square().mean();
}

torch::Tensor gradient_penalty(Discriminator& discriminator, const torch::Tensor& x_hat) {
  return gradient_penalty([&](const torch::Tensor& v) { return discriminator->src(v); }, x_hat);
}

std::pair<torch::Tensor, torch::Tensor> adversarial_d(const torch::Tensor& src_real,
                                                      const torch::Tensor& src_fake) {
  return {src_real.mean(), src_fake.mean()};
}

std::pair<torch::Tensor, torch::Tensor> adversarial_d(Discriminator& discriminator,
                                                      const torch::Tensor& x,
                                                      const torch::Tensor& x_cf) {
  require_same_shape(x, x_cf, "adversarial_d");
  return adversarial_d(discriminator->src(x), discriminator->src(x_cf));
}

torch::Tensor classification_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  auto y = labels.to(torch::kLong).reshape({-1, 1});
  if (probs.dim() != 2 || y.size(0) != probs.size(0)) {
    throw ShapeError("classification_loss: probs " + shape_string(probs.sizes()) + " vs labels " +
                     shape_string(labels.sizes()));
  }
  auto picked = probs.gather(1, y).squeeze(1);
  return -picked.clamp_min(kProbabilityFloor).log().mean();
}

double classification_loss(const ClassProbabilities& probs, LabelId label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.probs.size()) {
    throw InvalidRequest("classification_loss: label out of range");
  }
  return -std::log(std::max(probs.probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& s,
                                  const torch::Tensor& x_rec, const torch::Tensor& s_rec) {
  require_same_shape(x, x_rec, "reconstruction_loss (image)");
  require_same_shape(s, s_rec, "reconstruction_loss (saliency)");
  const auto count = static_cast<double>(x.numel() + s.numel());
  return ((x - x_rec).abs().sum() + (s - s_rec).abs().sum()) / count;
}

torch::Tensor fuse_loss(const torch::Tensor& x, const torch::Tensor& x_cf, const torch::Tensor& s) {
  require_same_shape(x, x_cf, "fuse_loss");
  return ((x - x_cf).abs() * (1 - saliency_for(s, x))).mean();
}

torch::Tensor salient_change(const torch::Tensor& x, const torch::Tensor& x_cf, const torch::Tensor& s) {
  require_same_shape(x, x_cf, "salient_change");
  return ((x - x_cf).abs() * saliency_for(s, x)).mean();
}

}  // namespace safe
