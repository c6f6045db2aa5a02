#pragma once

// Policy and value learning on imagined latent trajectories. The actor is
// trained by backpropagating lambda-returns through the learned dynamics;
// the critic regresses the same returns with a slow target copy providing
// the bootstrap values.

#include "pbdr/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace pbdr {

/// Tanh-squashed diagonal Gaussian policy over (h, z) features.
template <class S>
class Policy {
 public:
  Mlp<S> net;
  Eigen::Index action_dim = 2;

  Policy(const ModelDims& d, Rng& rng)
      : net("actor", d.feature(), {d.units, d.units}, 2 * d.action, rng, 0.1), action_dim(d.action) {}

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    net.collect(out);
    return out;
  }
};

template <class S>
struct PolicyVars {
  BoundMlp<S> net;
};

template <class S>
PolicyVars<S> bind(Tape<S>& tape, Policy<S>& policy, bool trainable) {
  return {bind(tape, policy.net, trainable)};
}

/// Pre-squash action distribution.
template <class S>
GaussianParams<S> policy_distribution(const PolicyVars<S>& policy, const LatentState<S>& state) {
  return gaussian_from_head(apply(policy.net, features(state)));
}

template <class S>
struct PolicySample {
  Var<S> action;    // [m, A], inside (-1, 1)
  Var<S> log_prob;  // [m, 1], density of the squashed action
  Var<S> entropy;   // [m, 1], entropy of the pre-squash Gaussian
};

/// Reparameterized draw a = tanh(mean + std * eps). With `deterministic` the
/// noise is zero and `rng` is left untouched.
template <class S>
PolicySample<S> policy_sample(const PolicyVars<S>& policy, const LatentState<S>& state, Rng& rng,
                              bool deterministic = false) {
  GaussianParams<S> dist = policy_distribution(policy, state);
  Tape<S>& tape = dist.mean.tape();
  const Eigen::Index rows = dist.mean.rows(), cols = dist.mean.cols();
  Matrix<S> eps_value = deterministic ? Matrix<S>::Zero(rows, cols) : rng.normal_matrix<S>(rows, cols);
  Var<S> eps = tape.constant(eps_value);
  Var<S> pre = add(dist.mean, mul(exp(dist.log_std), eps));
  Var<S> action = tanh(pre);

  const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
  Var<S> gauss = row_sum(add_scalar(sub(scale(square(eps), S(-0.5)), dist.log_std), -half_log_2pi));
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
  Var<S> log_det = row_sum(scale(add_scalar(sub(scale(pre, S(-1)), softplus(scale(pre, S(-2)))),
                                            static_cast<S>(std::numbers::ln2)),
                                 S(2)));
  Var<S> entropy = row_sum(add_scalar(dist.log_std, static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e))));
  return {action, sub(gauss, log_det), entropy};
}

/// State-value network with a slowly tracking target copy.
template <class S>
class Critic {
 public:
  Mlp<S> net;
  Mlp<S> target;

  Critic(const ModelDims& d, Rng& rng) : net("critic", d.feature(), {d.units, d.units}, 1, rng, 0.1) {
    target = net;
    for (auto& layer : target.layers) {
      layer.weight.name = "critic_target" + layer.weight.name.substr(6);
      layer.bias.name = "critic_target" + layer.bias.name.substr(6);
    }
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    net.collect(out);
    return out;
  }

  std::vector<Parameter<S>*> target_parameters() {
    std::vector<Parameter<S>*> out;
    target.collect(out);
    return out;
  }

  /// target <- (1 - rate) target + rate online
  void update_target(S rate) {
    auto online = parameters();
    auto slow = target_parameters();
    for (std::size_t i = 0; i < online.size(); ++i) {
      slow[i]->value = (S(1) - rate) * slow[i]->value + rate * online[i]->value;
    }
  }
};

template <class S>
struct CriticVars {
  BoundMlp<S> net;
};

template <class S>
CriticVars<S> bind_online(Tape<S>& tape, Critic<S>& critic, bool trainable) {
  return {bind(tape, critic.net, trainable)};
}

template <class S>
CriticVars<S> bind_target(Tape<S>& tape, Critic<S>& critic) {
  return {bind(tape, critic.target, false)};
}

template <class S>
Var<S> critic_value(const CriticVars<S>& critic, const LatentState<S>& state) {
  return apply(critic.net, features(state));
}

/// Lambda-returns by backward recursion
///   R_t = r_t + gamma c_t ((1 - lambda) v_{t+1} + lambda R_{t+1}),  R_T = v_T.
/// rewards and continues are [T, K]; values is [T + 1, K].
template <class S>
Matrix<S> lambda_returns(const Matrix<S>& rewards, const Matrix<S>& values, const Matrix<S>& continues, S gamma,
                         S lambda) {
  require(gamma > S(0) && gamma <= S(1), "lambda_returns: gamma must lie in (0, 1]");
  require(lambda >= S(0) && lambda <= S(1), "lambda_returns: lambda must lie in [0, 1]");
  require(values.rows() == rewards.rows() + 1 && values.cols() == rewards.cols(),
          "lambda_returns: values must have one more row than rewards");
  require(continues.rows() == rewards.rows() && continues.cols() == rewards.cols(),
          "lambda_returns: continues shape mismatch");
  const Eigen::Index T = rewards.rows();
  Matrix<S> out(T, rewards.cols());
  Matrix<S> next = values.row(T);
  for (Eigen::Index t = T; t-- > 0;) {
    next = rewards.row(t).array() +
           gamma * continues.row(t).array() * ((S(1) - lambda) * values.row(t + 1).array() + lambda * next.array());
    out.row(t) = next;
  }
  return out;
}

/// Differentiable form over per-step [m, 1] columns.
template <class S>
std::vector<Var<S>> lambda_returns(const std::vector<Var<S>>& rewards, const std::vector<Var<S>>& values,
                                   const std::vector<Var<S>>& continues, S gamma, S lambda) {
  require(values.size() == rewards.size() + 1, "lambda_returns: values must have one more entry than rewards");
  require(continues.size() == rewards.size(), "lambda_returns: continues length mismatch");
  const std::size_t T = rewards.size();
  std::vector<Var<S>> out(T);
  Var<S> next = values[T];
  for (std::size_t t = T; t-- > 0;) {
    Var<S> mix = add(scale(values[t + 1], S(1) - lambda), scale(next, lambda));
    next = add(rewards[t], scale(mul(continues[t], mix), gamma));
    out[t] = next;
  }
  return out;
}

/// Running 5th-95th percentile range of returns, used to normalize the actor
/// objective. The scale never drops below 1.
class ReturnNormalizer {
 public:
  explicit ReturnNormalizer(double decay = 0.99) : decay_(decay) {}

  template <class S>
  void update(const Matrix<S>& returns) {
    std::vector<double> v(returns.data(), returns.data() + returns.size());
    if (v.empty()) return;
    std::sort(v.begin(), v.end());
    const auto at = [&](double q) { return v[static_cast<std::size_t>(q * static_cast<double>(v.size() - 1))]; };
    const double lo = at(0.05), hi = at(0.95);
    if (!initialized_) {
      lo_ = lo;
      hi_ = hi;
      initialized_ = true;
    } else {
      lo_ = decay_ * lo_ + (1.0 - decay_) * lo;
      hi_ = decay_ * hi_ + (1.0 - decay_) * hi;
    }
  }

  double scale() const { return std::max(1.0, hi_ - lo_); }
  double low() const { return lo_; }
  double high() const { return hi_; }

 private:
  double decay_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  bool initialized_ = false;
};

/// -mean(targets) / return_scale - eta * mean(entropy). Every row (surviving
/// trajectory) carries equal weight.
template <class S>
Var<S> actor_loss(const std::vector<Var<S>>& targets, const std::vector<Var<S>>& entropies, S eta,
                  S return_scale = S(1)) {
  require(!targets.empty() && targets.size() == entropies.size(), "actor_loss: mismatched trajectory lengths");
  Var<S> ret = targets.front();
  for (std::size_t t = 1; t < targets.size(); ++t) ret = add(ret, targets[t]);
  Var<S> ent = entropies.front();
  for (std::size_t t = 1; t < entropies.size(); ++t) ent = add(ent, entropies[t]);
  const S steps = static_cast<S>(targets.size());
  Var<S> objective = scale(mean(ret), S(1) / (steps * return_scale));
  if (eta == S(0)) return scale(objective, S(-1));
  return sub(scale(objective, S(-1)), scale(mean(ent), eta / steps));
}

/// MSE between online values of the states and the targets. Both are
/// detached; they must live on the critic's tape.
template <class S>
Var<S> critic_loss(const CriticVars<S>& critic, const std::vector<LatentState<S>>& states,
                   const std::vector<Var<S>>& targets) {
  require(!states.empty() && states.size() == targets.size(), "critic_loss: mismatched lengths");
  Var<S> total;
  for (std::size_t t = 0; t < states.size(); ++t) {
    LatentState<S> s{stop_gradient(states[t].h), stop_gradient(states[t].z)};
    Var<S> err = mse(critic_value(critic, s), stop_gradient(targets[t]));
    total = total.valid() ? add(total, err) : err;
  }
  return scale(total, S(1) / static_cast<S>(states.size()));
}

}  // namespace pbdr
