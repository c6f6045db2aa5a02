#pragma once

#include "pbdr/ops.hpp"
#include "pbdr/rng.hpp"

namespace pbdr {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian, one distribution per row.
template <class S>
struct GaussianParams {
  Var<S> mean;
  Var<S> log_std;
};

/// Builds a Gaussian with log-std clamped to [kLogStdMin, kLogStdMax].
template <class S>
GaussianParams<S> make_gaussian(const Var<S>& mean, const Var<S>& raw_log_std) {
  detail::require_same_shape(mean, raw_log_std, "make_gaussian");
  return {mean, clamp(raw_log_std, S(kLogStdMin), S(kLogStdMax))};
}

/// Splits [m, 2d] head output into mean (first d columns) and log-std.
template <class S>
GaussianParams<S> gaussian_from_head(const Var<S>& head) {
  require(head.cols() % 2 == 0, "gaussian_from_head: odd column count");
  const Eigen::Index d = head.cols() / 2;
  return make_gaussian(slice(head, 0, d), slice(head, d, d));
}

template <class S>
GaussianParams<S> stop_gradient(const GaussianParams<S>& p) {
  return {stop_gradient(p.mean), stop_gradient(p.log_std)};
}

/// Reparameterized draw mean + exp(log_std) * eps with eps ~ N(0, I) taken
/// row-major from `rng`.
template <class S>
Var<S> gaussian_sample(const GaussianParams<S>& p, Rng& rng) {
  Var<S> eps = p.mean.tape().constant(rng.normal_matrix<S>(p.mean.rows(), p.mean.cols()));
  return add(p.mean, mul(exp(p.log_std), eps));
}

/// KL(q || p) per row, summed over dimensions: [m, 1].
template <class S>
Var<S> gaussian_kl_rows(const GaussianParams<S>& q, const GaussianParams<S>& p) {
  detail::require_same_shape(q.mean, p.mean, "gaussian_kl");
  detail::require_same_shape(q.log_std, p.log_std, "gaussian_kl");
  detail::require_same_shape(q.mean, q.log_std, "gaussian_kl");
  // log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
  Var<S> d = sub(p.log_std, q.log_std);
  Var<S> var_ratio = exp(scale(d, S(-2)));
  Var<S> mahal = mul(square(sub(q.mean, p.mean)), exp(scale(p.log_std, S(-2))));
  Var<S> per_dim = add_scalar(add(d, scale(add(var_ratio, mahal), S(0.5))), S(-0.5));
  return row_sum(per_dim);
}

/// KL(q || p) summed over every row and dimension: [1, 1].
template <class S>
Var<S> gaussian_kl(const GaussianParams<S>& q, const GaussianParams<S>& p) {
  return sum(gaussian_kl_rows(q, p));
}

}  // namespace pbdr
