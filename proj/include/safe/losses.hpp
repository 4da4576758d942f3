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

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "safe/errors.hpp"
#include "safe/greybox.hpp"
#include "safe/models.hpp"

namespace safe {

/// Loss coefficients. lambda_fuse = 1 and 5 are the two published variants;
/// 0 disables the fuse term.
struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_gp = 10.0;
  double lambda_rec = 10.0;
  double lambda_fuse = 1.0;
  /// When false the generator objective omits the reconstruction term.
  bool include_reconstruction = true;

  void validate() const;
};

/// Lower clamp applied to probabilities before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// All loss components of one training step. Fields of the network that was
/// not updated in the step stay zero.
struct LossBundle {
  double loss_real = 0.0;
  double loss_fake = 0.0;
  double adv_d = 0.0;  // loss_real - loss_fake
  double gp = 0.0;
  double cls_real = 0.0;
  double total_d = 0.0;
  double adv_g = 0.0;
  double cls_fake = 0.0;
  double rec = 0.0;
  double fuse = 0.0;
  double total_g = 0.0;
};

/// Discriminator-side components, as doubles for reporting or tensors for
/// backpropagation.
template <typename T>
struct DiscriminatorTerms {
  T loss_real;
  T loss_fake;
  T cls_real;
  T gp;
};

template <typename T>
struct GeneratorTerms {
  T adv_g;
  T cls_fake;
  T gp;
  T rec;
  T fuse;
};

namespace detail {
inline void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss component '") + name + "'");
}
inline void require_finite(const torch::Tensor&, const char*) {}
}  // namespace detail

/// -loss_real + loss_fake + lambda_cls * cls_real + lambda_gp * gp.
template <typename T>
T total_d(const DiscriminatorTerms<T>& t, const LossWeights& w) {
  detail::require_finite(t.loss_real, "loss_real");
  detail::require_finite(t.loss_fake, "loss_fake");
  detail::require_finite(t.cls_real, "cls_real");
  detail::require_finite(t.gp, "gp");
  return -t.loss_real + t.loss_fake + w.lambda_cls * t.cls_real + w.lambda_gp * t.gp;
}

/// -adv_g + lambda_cls * cls_fake + lambda_gp * gp + lambda_rec * rec + lambda_fuse * fuse.
template <typename T>
T total_g(const GeneratorTerms<T>& t, const LossWeights& w) {
  detail::require_finite(t.adv_g, "adv_g");
  detail::require_finite(t.cls_fake, "cls_fake");
  detail::require_finite(t.gp, "gp");
  detail::require_finite(t.rec, "rec");
  detail::require_finite(t.fuse, "fuse");
  T total = -t.adv_g + w.lambda_cls * t.cls_fake + w.lambda_gp * t.gp + w.lambda_fuse * t.fuse;
  if (w.include_reconstruction) total = total + w.lambda_rec * t.rec;
  return total;
}

struct InterpolationSample {
  torch::Tensor alpha;  // scalar or (N)
  torch::Tensor x_hat;
};

/// x_hat = alpha * x + (1 - alpha) * x_cf. `alpha` is a scalar or one value
/// per batch element.
InterpolationSample interpolate(const torch::Tensor& x, const torch::Tensor& x_cf,
                                const torch::Tensor& alpha);
InterpolationSample interpolate(const torch::Tensor& x, const torch::Tensor& x_cf, double alpha);

using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Batch mean of (||grad_x critic(x_hat)||_2 - 1)^2, the norm taken over all
/// elements of each sample. The result stays differentiable with respect to
/// the critic's parameters. `critic` maps (N, ...) to (N).
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_hat);
torch::Tensor gradient_penalty(Discriminator& discriminator, const torch::Tensor& x_hat);

/// (mean src(real), mean src(fake)).
std::pair<torch::Tensor, torch::Tensor> adversarial_d(const torch::Tensor& src_real,
                                                      const torch::Tensor& src_fake);
std::pair<torch::Tensor, torch::Tensor> adversarial_d(Discriminator& discriminator,
                                                      const torch::Tensor& x,
                                                      const torch::Tensor& x_cf);

/// Batch mean of -log(max(p[label], kProbabilityFloor)); probs is (N, d).
torch::Tensor classification_loss(const torch::Tensor& probs, const torch::Tensor& labels);
double classification_loss(const ClassProbabilities& probs, LabelId label);

/// Mean absolute difference over the concatenated (image, saliency) stack.
torch::Tensor reconstruction_loss(const torch::Tensor& x, const torch::Tensor& s,
                                  const torch::Tensor& x_rec, const torch::Tensor& s_rec);

/// Mean over pixels and channels of |x - x_cf| * (1 - s).
torch::Tensor fuse_loss(const torch::Tensor& x, const torch::Tensor& x_cf, const torch::Tensor& s);

/// Mean over pixels and channels of |x - x_cf| * s; with fuse_loss it sums to
/// mean |x - x_cf|.
torch::Tensor salient_change(const torch::Tensor& x, const torch::Tensor& x_cf, const torch::Tensor& s);

/// Reshapes a saliency map ((H, W), (N, H, W) or (N, 1, H, W)) so it
/// broadcasts against `image` ((C, H, W) or (N, C, H, W)).
torch::Tensor saliency_for(const torch::Tensor& s, const torch::Tensor& image);

}  // namespace safe
