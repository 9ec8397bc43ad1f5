#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "charemb/error.hpp"
#include "charemb/tensor.hpp"

namespace charemb {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update for step number t (1-based). Decoupled
/// weight decay is applied first: theta <- theta - lr * wd * theta.
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state,
               const AdamHyper& h, std::int64_t t) {
  if (grad.size() != param.size()) throw NumericError("adam_step: gradient shape mismatch");
  if (state.m.empty()) {
    state.m.assign(param.size(), T(0));
    state.v.assign(param.size(), T(0));
  }
  if (state.m.size() != param.size()) throw NumericError("adam_step: state shape mismatch");
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const T decay = static_cast<T>(h.lr * h.weight_decay);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    param[i] -= decay * param[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] * inv_bc1;
    const T vhat = state.v[i] * inv_bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over a fixed list of parameter tensors.
template <class T>
class Adam {
 public:
  Adam(std::vector<ad::Tensor<T>> params, AdamHyper hyper)
      : params_(std::move(params)), hyper_(hyper), state_(params_.size()) {}

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().empty()) {
        std::vector<T> zero(p.size(), T(0));
        adam_step<T>(p.data(), zero, state_[i], hyper_, t_);
      } else {
        adam_step<T>(p.data(), p.grad(), state_[i], hyper_, t_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<ad::Tensor<T>> params_;
  AdamHyper hyper_;
  std::vector<AdamMoments<T>> state_;
  std::int64_t t_ = 0;
};

}  // namespace charemb
