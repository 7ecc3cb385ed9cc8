#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ame/common.hpp"
#include "ame/tensor.hpp"

namespace ame {

// Decoupled weight decay Adam. Moments are stored in the parameter precision.
template <class T>
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t t = 0;
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;

  void init(const std::vector<Mat<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.rows, p.cols);
      v.emplace_back(p.rows, p.cols);
    }
    t = 0;
  }

  void step(std::vector<Mat<T>*>& params, const std::vector<const Mat<T>*>& grads, double lr) {
    if (params.size() != m.size() || grads.size() != m.size())
      fail(ErrorCode::shape_mismatch, "AdamW: parameter/state count mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
      Mat<T>& p = *params[i];
      const Mat<T>& g = *grads[i];
      for (size_t j = 0; j < p.size(); ++j) {
        const double gj = double(g.d[j]);
        const double mj = beta1 * double(m[i].d[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * double(v[i].d[j]) + (1.0 - beta2) * gj * gj;
        m[i].d[j] = T(mj);
        v[i].d[j] = T(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        p.d[j] = T(double(p.d[j]) -
                   lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * double(p.d[j])));
      }
    }
  }
};

// Scales gradients so the global L2 norm is at most clip_norm; returns the
// pre-clip norm.
template <class T>
double clip_global_norm(std::vector<Mat<T>*>& grads, double clip_norm) {
  double sq = 0.0;
  for (const auto* g : grads)
    for (const T x : g->d) sq += double(x) * double(x);
  const double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto* g : grads)
      for (auto& x : g->d) x = T(double(x) * s);
  }
  return norm;
}

// Linear warmup followed by linear decay to zero at total_steps.
inline double lr_at_step(double peak_lr, int64_t step, int64_t warmup, int64_t total_steps,
                         bool constant_after_warmup = false) {
  const double s = double(step) + 1.0;
  if (warmup > 0 && s <= double(warmup)) return peak_lr * s / double(warmup);
  if (constant_after_warmup) return peak_lr;
  if (total_steps <= warmup) return peak_lr;
  const double frac = (double(total_steps) - s) / double(total_steps - warmup);
  return peak_lr * std::max(0.0, frac);
}

}  // namespace ame
