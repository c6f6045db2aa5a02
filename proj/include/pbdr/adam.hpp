#pragma once

#include "pbdr/tape.hpp"

#include <cmath>
#include <vector>

namespace pbdr {

template <class S>
struct AdamState {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  long step = 0;
  std::vector<Matrix<S>> first_moment;
  std::vector<Matrix<S>> second_moment;

  explicit AdamState(S learning_rate = S(1e-3)) : lr(learning_rate) {}
};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class S>
S clip_grad_norm(std::vector<Matrix<S>>& grads, S max_norm) {
  S total = 0;
  for (const auto& g : grads) total += g.squaredNorm();
  const S norm = std::sqrt(total);
  if (max_norm > S(0) && norm > max_norm) {
    const S factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

/// One bias-corrected Adam update. Moments are allocated on the first call.
template <class S>
void adam_step(const std::vector<Parameter<S>*>& params, const std::vector<Matrix<S>>& grads,
               AdamState<S>& state) {
  require(grads.size() == params.size(), "adam_step: missing gradient for a parameter");
  if (state.first_moment.empty()) {
    for (const Parameter<S>* p : params) {
      state.first_moment.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].rows() == params[i]->value.rows() && grads[i].cols() == params[i]->value.cols(),
            "adam_step: gradient shape mismatch for " + params[i]->name);
  }
  ++state.step;
  const S c1 = S(1) - std::pow(state.beta1, static_cast<S>(state.step));
  const S c2 = S(1) - std::pow(state.beta2, static_cast<S>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (S(1) - state.beta1) * grads[i];
    v = state.beta2 * v + (S(1) - state.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i]->value.array() -=
        state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace pbdr
