#pragma once
// Independent reference implementations used by the unit and acceptance tests.

#include "lmim/lmim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace oracle {

using Matd = std::vector<std::vector<double>>;

inline Matd to_rows(const lmim::Mat<double>& m) {
  Matd r(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

/// Textbook scaled dot-product attention with explicit loops and a two-pass softmax.
inline Matd naive_attention(const Matd& Q, const Matd& K, const Matd& V, int d, Matd* weights = nullptr) {
  const std::size_t n = Q.size(), m = K.size(), dv = V[0].size();
  Matd out(n, std::vector<double>(dv, 0.0));
  if (weights) weights->assign(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(m);
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < Q[i].size(); ++t) dot += Q[i][t] * K[j][t];
      s[j] = dot / std::sqrt(static_cast<double>(d));
    }
    double mx = s[0];
    for (double x : s) mx = std::max(mx, x);
    double z = 0.0;
    for (double& x : s) {
      x = std::exp(x - mx);
      z += x;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double w = s[j] / z;
      if (weights) (*weights)[i][j] = w;
      for (std::size_t t = 0; t < dv; ++t) out[i][t] += w * V[j][t];
    }
  }
  return out;
}

struct TensorCheck {
  std::string name;
  double rel_error = 0.0;
  double abs_error = 0.0;
  double grad_norm = 0.0;
};

/// Central finite differences of `loss` against the accumulated gradients of
/// every parameter of `module`. Per-tensor error is ||num - ana|| / max(||num||, ||ana||);
/// tensors whose analytic and numeric gradients both vanish (norm < floor) report
/// their absolute difference instead.
template <class Module>
std::vector<TensorCheck> finite_difference_check(Module& module, const std::function<double()>& loss,
                                                 double step = 1e-5, double floor = 1e-8) {
  std::vector<TensorCheck> out;
  module.visit([&](const std::string& name, lmim::nn::Param<double>& p) {
    lmim::Mat<double> num(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + step;
      const double lp = loss();
      p.value.data()[i] = orig - step;
      const double lm = loss();
      p.value.data()[i] = orig;
      num.data()[i] = (lp - lm) / (2 * step);
    }
    TensorCheck c;
    c.name = name;
    c.abs_error = (num - p.grad).norm();
    c.grad_norm = p.grad.norm();
    const double scale = std::max(num.norm(), p.grad.norm());
    c.rel_error = scale < floor ? c.abs_error : c.abs_error / scale;
    out.push_back(c);
  }, std::string());
  return out;
}

inline double worst(const std::vector<TensorCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.rel_error);
  return w;
}

/// Micro LMIM model: 8x8 RGB images, 4x4 patches (N = 4), width 8, one block each side.
inline lmim::LmimConfig micro_config() {
  lmim::LmimConfig cfg;
  cfg.encoder.depth = 1;
  cfg.encoder.dim = 8;
  cfg.encoder.heads = 2;
  cfg.encoder.height = 8;
  cfg.encoder.width = 8;
  cfg.encoder.patch = 4;
  cfg.decoder.depth = 1;
  cfg.decoder.dim = 8;
  cfg.decoder.heads = 2;
  cfg.target_dim = 5;
  return cfg;
}

template <class T>
lmim::LmimBatch<T> random_batch(const lmim::LmimConfig& cfg, int batch, double ratio, std::uint64_t seed) {
  lmim::Rng rng(seed);
  const int N = cfg.encoder.num_patches(), pd = cfg.encoder.patch_dim();
  lmim::LmimBatch<T> b;
  b.batch = batch;
  b.masked_patches.resize(static_cast<Eigen::Index>(batch) * N, pd);
  b.guidance_patches.resize(static_cast<Eigen::Index>(batch) * N, pd);
  for (Eigen::Index i = 0; i < b.masked_patches.size(); ++i) {
    b.masked_patches.data()[i] = static_cast<T>(rng.uniform());
    b.guidance_patches.data()[i] = static_cast<T>(rng.uniform());
  }
  int rows = 0;
  for (int i = 0; i < batch; ++i) {
    b.plans.push_back(lmim::plan_random_mask(N, ratio, seed * 131 + i));
    rows += static_cast<int>(b.plans.back().masked.size());
  }
  b.targets.resize(rows, cfg.target_dim);
  for (Eigen::Index i = 0; i < b.targets.size(); ++i) b.targets.data()[i] = static_cast<T>(rng.normal());
  return b;
}

}  // namespace oracle
