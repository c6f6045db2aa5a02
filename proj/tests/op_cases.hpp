#pragma once

// Randomized gradient-check instances for every differentiable op and for
// the world-model and actor losses.

#include "gradcheck.hpp"

#include "pbdr/actor_critic.hpp"
#include "pbdr/gaussian.hpp"
#include "pbdr/imagination.hpp"
#include "pbdr/layers.hpp"
#include "pbdr/ops.hpp"
#include "pbdr/world_model.hpp"

#include <string>
#include <vector>

namespace pbdr::testing {

struct GradCase {
  std::string name;
  /// Draws one random instance and returns its relative error.
  std::function<double(Rng&)> run;
};

inline Eigen::Index dim(Rng& rng, int lo = 1, int hi = 4) {
  return lo + static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// Resamples entries lying within `gap` of any kink.
inline Md away_from(Md m, std::initializer_list<double> kinks, Rng& rng, double gap = 1e-3) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    bool near = true;
    while (near) {
      near = false;
      for (double k : kinks) near = near || std::abs(m.data()[i] - k) < gap;
      if (near) m.data()[i] = rng.normal() * 2.0;
    }
  }
  return m;
}

/// Reduces an op output to a scalar through fixed random weights.
inline Var<double> project(const Var<double>& out, const Md& weights) {
  return sum(mul(out, out.tape().constant(weights)));
}

/// Single-input elementwise op on an [r, c] matrix.
template <class Op>
GradCase unary_case(std::string name, Op op, double input_scale = 1.0, std::initializer_list<double> kinks = {}) {
  std::vector<double> k(kinks);
  return {name, [op, input_scale, k](Rng& rng) {
            const Eigen::Index r = dim(rng), c = dim(rng);
            Md x = random_matrix(rng, r, c, input_scale);
            for (double kink : k) x = away_from(x, {kink}, rng);
            Tape<double> probe;
            const Md shape = op(probe.constant(x)).value();
            const Md w = random_matrix(rng, shape.rows(), shape.cols());
            return check_inputs([&](Tape<double>&, const std::vector<Var<double>>& in) { return project(op(in[0]), w); },
                                {x});
          }};
}

inline std::vector<GradCase> op_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"matmul", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), k = dim(rng), c = dim(rng);
                     const Md w = random_matrix(rng, r, c);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) { return project(matmul(in[0], in[1]), w); },
                         {random_matrix(rng, r, k), random_matrix(rng, k, c)});
                   }});
  auto binary = [](std::string name, auto op) {
    return GradCase{name, [op](Rng& rng) {
                      const Eigen::Index r = dim(rng), c = dim(rng);
                      const Md w = random_matrix(rng, r, c);
                      return check_inputs(
                          [&](Tape<double>&, const std::vector<Var<double>>& in) { return project(op(in[0], in[1]), w); },
                          {random_matrix(rng, r, c), random_matrix(rng, r, c)});
                    }};
  };
  cases.push_back(binary("add", [](const Var<double>& a, const Var<double>& b) { return add(a, b); }));
  cases.push_back(binary("sub", [](const Var<double>& a, const Var<double>& b) { return sub(a, b); }));
  cases.push_back(binary("mul", [](const Var<double>& a, const Var<double>& b) { return mul(a, b); }));
  cases.push_back({"add_bias", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng);
                     const Md w = random_matrix(rng, r, c);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) { return project(add_bias(in[0], in[1]), w); },
                         {random_matrix(rng, r, c), random_matrix(rng, 1, c)});
                   }});
  cases.push_back(unary_case("scale", [](const Var<double>& x) { return scale(x, -1.7); }));
  cases.push_back(unary_case("add_scalar", [](const Var<double>& x) { return mul(add_scalar(x, 0.3), x); }));
  cases.push_back({"concat", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), a = dim(rng), b = dim(rng), c = dim(rng);
                     const Md w = random_matrix(rng, r, a + b + c);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) {
                           return project(concat<double>({in[0], in[1], in[2]}), w);
                         },
                         {random_matrix(rng, r, a), random_matrix(rng, r, b), random_matrix(rng, r, c)});
                   }});
  cases.push_back({"slice", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng, 2, 6);
                     const Eigen::Index begin = dim(rng, 0, static_cast<int>(c) - 1);
                     const Eigen::Index count = dim(rng, 1, static_cast<int>(c - begin));
                     const Md w = random_matrix(rng, r, count);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) {
                           return project(slice(in[0], begin, count), w);
                         },
                         {random_matrix(rng, r, c)});
                   }});
  cases.push_back({"gather_rows", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng), m = dim(rng, 1, 6);
                     std::vector<int> idx;
                     for (Eigen::Index i = 0; i < m; ++i) idx.push_back(static_cast<int>(rng.next_u64() % r));
                     const Md w = random_matrix(rng, m, c);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) {
                           return project(gather_rows(in[0], std::span<const int>(idx)), w);
                         },
                         {random_matrix(rng, r, c)});
                   }});
  cases.push_back(unary_case("tanh", [](const Var<double>& x) { return tanh(x); }, 1.5));
  cases.push_back(unary_case("sigmoid", [](const Var<double>& x) { return sigmoid(x); }, 2.0));
  cases.push_back(unary_case("softplus", [](const Var<double>& x) { return softplus(x); }, 3.0));
  cases.push_back(unary_case("exp", [](const Var<double>& x) { return exp(x); }));
  cases.push_back(unary_case("square", [](const Var<double>& x) { return square(x); }));
  cases.push_back(unary_case("clamp", [](const Var<double>& x) { return clamp(x, -0.5, 0.8); }, 1.0, {-0.5, 0.8}));
  cases.push_back(unary_case("maximum", [](const Var<double>& x) { return maximum(x, 0.2); }, 1.0, {0.2}));
  cases.push_back(unary_case("sum", [](const Var<double>& x) { return mul(sum(x), sum(square(x))); }));
  cases.push_back(unary_case("mean", [](const Var<double>& x) { return mul(mean(x), mean(square(x))); }));
  cases.push_back({"row_sum", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng);
                     const Md w = random_matrix(rng, r, 1);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) { return project(row_sum(in[0]), w); },
                         {random_matrix(rng, r, c)});
                   }});
  cases.push_back({"mse", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& in) { return mse(in[0], in[1]); },
                         {random_matrix(rng, r, c), random_matrix(rng, r, c)});
                   }});
  cases.push_back({"gaussian_kl", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng);
                     std::vector<Md> in;
                     for (int i = 0; i < 4; ++i) in.push_back(random_matrix(rng, r, c, i % 2 ? 0.7 : 1.0));
                     for (int i : {1, 3}) in[i] = away_from(in[i], {-5.0, 2.0}, rng);
                     return check_inputs(
                         [](Tape<double>&, const std::vector<Var<double>>& v) {
                           return gaussian_kl(make_gaussian(v[0], v[1]), make_gaussian(v[2], v[3]));
                         },
                         in);
                   }});
  cases.push_back({"gaussian_sample", [](Rng& rng) {
                     const Eigen::Index r = dim(rng), c = dim(rng);
                     const std::uint64_t seed = rng.next_u64();
                     const Md w = random_matrix(rng, r, c);
                     return check_inputs(
                         [&](Tape<double>&, const std::vector<Var<double>>& v) {
                           Rng noise(seed);
                           return project(gaussian_sample(make_gaussian(v[0], v[1]), noise), w);
                         },
                         {random_matrix(rng, r, c), away_from(random_matrix(rng, r, c, 0.7), {-5.0, 2.0}, rng)});
                   }});
  cases.push_back({"gru_step", [](Rng& rng) {
                     const Eigen::Index rows = dim(rng), in = dim(rng), hid = dim(rng);
                     GruCell<double> cell("gru", in, hid, rng);
                     cell.bias.value = random_matrix(rng, 1, 3 * hid, 0.5);
                     const Md h = random_matrix(rng, rows, hid), x = random_matrix(rng, rows, in);
                     const Md w = random_matrix(rng, rows, hid);
                     const double inputs = check_inputs(
                         [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                           return project(gru_step(bind(t, cell, false), v[0], v[1]), w);
                         },
                         {h, x});
                     std::vector<Parameter<double>*> params;
                     cell.collect(params);
                     const double weights = check_parameters(
                         [&](Tape<double>& t) {
                           return project(gru_step(bind(t, cell, true), t.constant(h), t.constant(x)), w);
                         },
                         params, 0, rng);
                     return std::max(inputs, weights);
                   }});
  cases.push_back({"mlp", [](Rng& rng) {
                     const Eigen::Index rows = dim(rng), in = dim(rng), out = dim(rng);
                     Mlp<double> net("mlp", in, {dim(rng, 2, 5), dim(rng, 2, 5)}, out, rng);
                     const Md x = random_matrix(rng, rows, in), w = random_matrix(rng, rows, out);
                     std::vector<Parameter<double>*> params;
                     net.collect(params);
                     return check_parameters(
                         [&](Tape<double>& t) { return project(apply(bind(t, net, true), t.constant(x)), w); }, params,
                         0, rng);
                   }});
  return cases;
}

/// Small model used by the composite checks.
inline ModelDims tiny_dims() {
  ModelDims d;
  d.deter = 6;
  d.stoch = 3;
  d.embed = 5;
  d.units = 6;
  d.ensemble = 3;
  return d;
}

inline SequenceBatch<double> random_batch(Rng& rng, const ModelDims& d, Eigen::Index B, Eigen::Index L) {
  SequenceBatch<double> b;
  for (Eigen::Index t = 0; t < L; ++t) {
    b.observations.push_back(random_matrix(rng, B, d.obs, 0.5));
    b.actions.push_back(random_matrix(rng, B, d.action, 0.5).array().tanh().matrix());
    b.rewards.push_back(-Md::NullaryExpr(B, 1, [&] { return static_cast<double>(rng.next_u64() % 3); }));
    b.continues.push_back(Md::Constant(B, 1, t + 1 == L ? 0.0 : 1.0));
  }
  return b;
}

inline std::vector<GradCase> composite_cases(int sample = 40) {
  std::vector<GradCase> cases;
  cases.push_back({"world_model_loss", [sample](Rng& rng) {
                     const ModelDims d = tiny_dims();
                     WorldModel<double> wm(d, rng);
                     const SequenceBatch<double> batch = random_batch(rng, d, 2, 3);
                     const std::uint64_t seed = rng.next_u64();
                     WorldModelLossConfig cfg;
                     cfg.free_bits = 0.1;
                     auto loss = [&](Tape<double>& t) {
                       Rng noise(seed);
                       WorldModelLoss<double> l = world_model_loss(bind(t, wm, true), batch, noise, cfg);
                       return add(l.total, l.ensemble_aux);
                     };
                     return check_parameters(loss, wm.parameters(), sample, rng);
                   }});
  cases.push_back({"actor_loss", [sample](Rng& rng) {
                     const ModelDims d = tiny_dims();
                     WorldModel<double> wm(d, rng);
                     Policy<double> policy(d, rng);
                     Critic<double> critic(d, rng);
                     StartStates<double> start{random_matrix(rng, 2, d.deter, 0.5), random_matrix(rng, 2, d.stoch),
                                               random_matrix(rng, 2, d.stoch, 0.3)};
                     ImaginationConfig ic;
                     ic.particles = 2;
                     ic.branches = 2;
                     ic.horizon = 2;
                     const std::uint64_t seed = rng.next_u64();
                     auto loss = [&](Tape<double>& t) {
                       ImaginationRngs rngs(seed);
                       WorldModelVars<double> w = bind(t, wm, false);
                       PolicyVars<double> p = bind(t, policy, true);
                       CriticVars<double> c = bind_online(t, critic, false);
                       CriticVars<double> slow = bind_target(t, critic);
                       TrajectoryPaths<double> paths = trace_paths(imagine_rollout(w, p, c, start, ic, rngs));
                       std::vector<Var<double>> values;
                       for (const auto& s : paths.states) values.push_back(critic_value(slow, s));
                       std::vector<Var<double>> cont;
                       for (const auto& x : paths.continues) cont.push_back(stop_gradient(x));
                       auto targets = lambda_returns(paths.rewards, values, cont, 0.985, 0.95);
                       return actor_loss(targets, paths.entropies, 3e-4, 1.0);
                     };
                     return check_parameters(loss, policy.parameters(), sample, rng);
                   }});
  return cases;
}

}  // namespace pbdr::testing
