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

// Brute-force reference implementations used by the tests. Everything here
// works on flat std::vector<double> buffers with explicit loops so that it
// shares no code path with the library under test.

#include <torch/torch.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_vec(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  return Vec(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

inline torch::Tensor to_tensor(const Vec& v, std::vector<std::int64_t> shape,
                               torch::Dtype dtype = torch::kDouble) {
  return torch::tensor(v, torch::kDouble).reshape(shape).to(dtype);
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// --- losses --------------------------------------------------------------

inline Vec interpolate(const Vec& x, const Vec& x_cf, const Vec& alpha, std::int64_t per_sample) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = alpha[i / static_cast<std::size_t>(per_sample)];
    out[i] = a * x[i] + (1.0 - a) * x_cf[i];
  }
  return out;
}

inline double mean(const Vec& v) {
  double s = 0.0;
  for (double e : v) s += e;
  return s / static_cast<double>(v.size());
}

inline double classification_loss(const Vec& probs, const std::vector<std::int64_t>& labels,
                                  std::int64_t d) {
  double s = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    double p = probs[n * static_cast<std::size_t>(d) + static_cast<std::size_t>(labels[n])];
    if (p < 1e-12) p = 1e-12;
    s += -std::log(p);
  }
  return s / static_cast<double>(labels.size());
}

inline double reconstruction_loss(const Vec& x, const Vec& s, const Vec& x_rec, const Vec& s_rec) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(x[i] - x_rec[i]);
  for (std::size_t i = 0; i < s.size(); ++i) total += std::abs(s[i] - s_rec[i]);
  return total / static_cast<double>(x.size() + s.size());
}

// x and x_cf are (N, C, H, W) flattened, s is (N, H, W) flattened.
inline double masked_change(const Vec& x, const Vec& x_cf, const Vec& s, std::int64_t n,
                            std::int64_t c, std::int64_t hw, bool outside) {
  double total = 0.0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < c; ++k)
      for (std::int64_t p = 0; p < hw; ++p) {
        const auto i = static_cast<std::size_t>((b * c + k) * hw + p);
        const double w = s[static_cast<std::size_t>(b * hw + p)];
        total += std::abs(x[i] - x_cf[i]) * (outside ? 1.0 - w : w);
      }
  return total / static_cast<double>(n * c * hw);
}

// Gradient penalty with the input gradient taken by central differences of
// `critic`, which maps one flattened sample to a score.
inline double gradient_penalty_fd(const std::function<double(const Vec&)>& critic, const Vec& x_hat,
                                  std::int64_t n, double h = 1e-6) {
  const auto per = x_hat.size() / static_cast<std::size_t>(n);
  double total = 0.0;
  for (std::int64_t b = 0; b < n; ++b) {
    Vec sample(x_hat.begin() + static_cast<std::ptrdiff_t>(b * per),
               x_hat.begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double keep = sample[i];
      sample[i] = keep + h;
      const double up = critic(sample);
      sample[i] = keep - h;
      const double down = critic(sample);
      sample[i] = keep;
      const double g = (up - down) / (2 * h);
      sq += g * g;
    }
    total += (std::sqrt(sq) - 1.0) * (std::sqrt(sq) - 1.0);
  }
  return total / static_cast<double>(n);
}

// --- metrics -------------------------------------------------------------

inline double proximity(const std::vector<Vec>& q, const std::vector<Vec>& cf) {
  double total = 0.0;
  for (std::size_t p = 0; p < q.size(); ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < q[p].size(); ++i) s += std::abs(q[p][i] - cf[p][i]);
    total += s / static_cast<double>(q[p].size());
  }
  return total / static_cast<double>(q.size());
}

// Images are (C, H, W) flattened.
inline double sparsity(const std::vector<Vec>& q, const std::vector<Vec>& cf, std::int64_t c,
                       double tau) {
  double total = 0.0;
  for (std::size_t p = 0; p < q.size(); ++p) {
    const auto hw = static_cast<std::int64_t>(q[p].size()) / c;
    std::int64_t changed = 0;
    for (std::int64_t px = 0; px < hw; ++px) {
      double m = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        const auto i = static_cast<std::size_t>(k * hw + px);
        m = std::max(m, std::abs(q[p][i] - cf[p][i]));
      }
      if (m > tau) ++changed;
    }
    total += static_cast<double>(changed) / static_cast<double>(hw);
  }
  return total / static_cast<double>(q.size());
}

using Rows = std::vector<Vec>;

inline Vec column_mean(const Rows& x) {
  Vec mu(x[0].size(), 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < r.size(); ++j) mu[j] += r[j];
  for (auto& v : mu) v /= static_cast<double>(x.size());
  return mu;
}

inline Eigen::MatrixXd covariance(const Rows& x) {
  const auto mu = column_mean(x);
  const auto k = mu.size();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (const auto& r : x)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += (r[i] - mu[i]) * (r[j] - mu[j]);
  return c / static_cast<double>(x.size() - 1);
}

// Trace of (S_r S_f)^{1/2} as the sum of square roots of the (real,
// nonnegative) eigenvalues of the nonsymmetric product.
inline double fid(const Rows& real, const Rows& fake) {
  const auto mr = column_mean(real);
  const auto mf = column_mean(fake);
  double d2 = 0.0;
  for (std::size_t j = 0; j < mr.size(); ++j) d2 += (mr[j] - mf[j]) * (mr[j] - mf[j]);
  const Eigen::MatrixXd cr = covariance(real);
  const Eigen::MatrixXd cf = covariance(fake);
  Eigen::EigenSolver<Eigen::MatrixXd> eig(cr * cf, false);
  double tr = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    tr += std::sqrt(std::max(0.0, eig.eigenvalues()[i].real()));
  }
  return d2 + cr.trace() + cf.trace() - 2.0 * tr;
}

inline double poly_kernel(const Vec& a, const Vec& b) {
  double dot = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
  const double base = dot / static_cast<double>(a.size()) + 1.0;
  return base * base * base;
}

// Unbiased MMD^2. For equal set sizes the cross term skips i == j as well.
inline double kid(const Rows& x, const Rows& y) {
  const auto m = x.size();
  const auto n = y.size();
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) xx += poly_kernel(x[i], x[j]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) yy += poly_kernel(y[i], y[j]);
  double cross_count = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (m == n && i == j) continue;
      xy += poly_kernel(x[i], y[j]);
      cross_count += 1.0;
    }
  return xx / static_cast<double>(m * (m - 1)) + yy / static_cast<double>(n * (n - 1)) -
         2.0 * xy / cross_count;
}

inline double inception_score(const Rows& p) {
  const auto marginal = column_mean(p);
  double kl = 0.0;
  for (const auto& r : p)
    for (std::size_t k = 0; k < r.size(); ++k)
      if (r[k] > 0) kl += r[k] * std::log(r[k] / marginal[k]);
  return std::exp(kl / static_cast<double>(p.size()));
}

// --- saliency ------------------------------------------------------------

// Bilinear resize with half-pixel centres (align_corners = false) of one
// (h, w) map to (H, W).
inline Vec bilinear(const Vec& src, std::int64_t h, std::int64_t w, std::int64_t H, std::int64_t W) {
  Vec out(static_cast<std::size_t>(H * W));
  const double sy = static_cast<double>(h) / static_cast<double>(H);
  const double sx = static_cast<double>(w) / static_cast<double>(W);
  for (std::int64_t r = 0; r < H; ++r) {
    double y = (static_cast<double>(r) + 0.5) * sy - 0.5;
    if (y < 0) y = 0;
    auto y0 = static_cast<std::int64_t>(std::floor(y));
    const auto y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::int64_t c = 0; c < W; ++c) {
      double x = (static_cast<double>(c) + 0.5) * sx - 0.5;
      if (x < 0) x = 0;
      auto x0 = static_cast<std::int64_t>(std::floor(x));
      const auto x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      auto at = [&](std::int64_t rr, std::int64_t cc) { return src[static_cast<std::size_t>(rr * w + cc)]; };
      out[static_cast<std::size_t>(r * W + c)] =
          (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    }
  }
  return out;
}

// Grad-CAM of one sample from (K, h, w) activations and gradients.
inline Vec grad_cam(const Vec& act, const Vec& grad, std::int64_t k, std::int64_t h, std::int64_t w,
                    std::int64_t H, std::int64_t W) {
  Vec raw(static_cast<std::size_t>(h * w), 0.0);
  for (std::int64_t c = 0; c < k; ++c) {
    double weight = 0.0;
    for (std::int64_t p = 0; p < h * w; ++p) weight += grad[static_cast<std::size_t>(c * h * w + p)];
    weight /= static_cast<double>(h * w);
    for (std::int64_t p = 0; p < h * w; ++p) raw[static_cast<std::size_t>(p)] += weight * act[static_cast<std::size_t>(c * h * w + p)];
  }
  for (auto& v : raw) v = std::max(v, 0.0);
  Vec up = (h == H && w == W) ? raw : bilinear(raw, h, w, H, W);
  double peak = 0.0;
  for (double v : up) peak = std::max(peak, v);
  for (auto& v : up) v = peak > 1e-8 ? v / peak : 0.0;
  return up;
}

// --- autograd ------------------------------------------------------------

// Central-difference gradient of a scalar function of `params` (double
// tensors, modified in place and restored).
inline std::vector<Vec> finite_difference(const std::function<double()>& f,
                                          const std::vector<torch::Tensor>& params, double h = 1e-6) {
  torch::NoGradGuard no_grad;
  std::vector<Vec> out;
  for (const auto& p : params) {
    auto flat = p.view({-1});
    Vec g(static_cast<std::size_t>(flat.numel()));
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double keep = flat[i].item<double>();
      flat[i].fill_(keep + h);
      const double up = f();
      flat[i].fill_(keep - h);
      const double down = f();
      flat[i].fill_(keep);
      g[static_cast<std::size_t>(i)] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Max over entries of |a - b| / max(|a|, |b|, floor).
inline double max_rel_diff(const Vec& a, const Vec& b, double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
