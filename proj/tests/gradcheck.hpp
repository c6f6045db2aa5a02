#pragma once

// Central finite-difference checks for scalar tape functions in double.

#include "pbdr/tape.hpp"
#include "pbdr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace pbdr::testing {

using Md = Matrix<double>;

/// Builds a 1x1 loss from leaves holding `inputs`.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

inline double evaluate(const ScalarFn& f, const std::vector<Md>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  return f(tape, vars).value()(0, 0);
}

/// Relative error between backprop and central differences over every input
/// entry.
inline double check_inputs(const ScalarFn& f, std::vector<Md> inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m));
  Var<double> loss = f(tape, vars);
  tape.backward(loss);
  std::vector<double> analytic, numeric;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Md g = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = evaluate(f, inputs);
      inputs[k].data()[i] = saved - h;
      const double down = evaluate(f, inputs);
      inputs[k].data()[i] = saved;
      analytic.push_back(g.data()[i]);
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

/// Same check against model parameters. `loss` binds the parameters onto the
/// tape it is given; `sample` entries are probed (all when <= 0). Detached
/// values are replayed from the unperturbed pass, so the oracle differentiates
/// the same surrogate that backprop does.
inline double check_parameters(const std::function<Var<double>(Tape<double>&)>& loss,
                               const std::vector<Parameter<double>*>& params, int sample, Rng& pick,
                               double h = 1e-5) {
  std::vector<Md> detached;
  Tape<double> tape;
  tape.attach_detach_log(&detached, false);
  Var<double> l = loss(tape);
  tape.backward(l);
  const std::vector<Md> grads = tape.parameter_grads(params);

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p]->value.size(); ++i) coords.emplace_back(p, i);
  }
  if (sample > 0 && static_cast<std::size_t>(sample) < coords.size()) {
    for (int j = 0; j < sample; ++j) {
      const std::size_t r = j + pick.next_u64() % (coords.size() - j);
      std::swap(coords[j], coords[r]);
    }
    coords.resize(static_cast<std::size_t>(sample));
  }

  auto value = [&]() {
    Tape<double> t;
    t.attach_detach_log(&detached, true);
    return loss(t).value()(0, 0);
  };
  std::vector<double> analytic, numeric;
  for (const auto& [p, i] : coords) {
    double& x = params[p]->value.data()[i];
    const double saved = x;
    x = saved + h;
    const double up = value();
    x = saved - h;
    const double down = value();
    x = saved;
    analytic.push_back(grads[p].data()[i]);
    numeric.push_back((up - down) / (2.0 * h));
  }
  return relative_error(analytic, numeric);
}

inline Md random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  return rng.normal_matrix<double>(r, c) * scale;
}

}  // namespace pbdr::testing
