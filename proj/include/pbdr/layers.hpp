#pragma once

// Parameterized building blocks: affine layers, tanh MLPs and a GRU cell.
// Each block owns its Parameters; bind() places them on a Tape for one
// forward pass (as trainable leaves or as constants).

#include "pbdr/ops.hpp"
#include "pbdr/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace pbdr {

template <class S>
struct Linear {
  Parameter<S> weight;  // [in, out]
  Parameter<S> bias;    // [1, out]

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng, double init_scale = 1.0) {
    weight.name = name + ".w";
    bias.name = name + ".b";
    const double stddev = init_scale / std::sqrt(static_cast<double>(in));
    weight.value = rng.normal_matrix<S>(in, out) * static_cast<S>(stddev);
    bias.value = Matrix<S>::Zero(1, out);
  }

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class S>
struct BoundLinear {
  Var<S> weight;
  Var<S> bias;
};

template <class S>
BoundLinear<S> bind(Tape<S>& tape, Linear<S>& layer, bool trainable) {
  return {tape.parameter(layer.weight, trainable), tape.parameter(layer.bias, trainable)};
}

template <class S>
Var<S> apply(const BoundLinear<S>& layer, const Var<S>& x) {
  return add_bias(matmul(x, layer.weight), layer.bias);
}

/// Fully connected network with tanh between layers and a linear output.
template <class S>
struct Mlp {
  std::vector<Linear<S>> layers;

  Mlp() = default;
  Mlp(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out,
      Rng& rng, double output_scale = 1.0) {
    Eigen::Index width = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(name + ".l" + std::to_string(i), width, hidden[i], rng);
      width = hidden[i];
    }
    layers.emplace_back(name + ".out", width, out, rng, output_scale);
  }

  Eigen::Index out_dim() const { return layers.back().out_dim(); }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

template <class S>
struct BoundMlp {
  std::vector<BoundLinear<S>> layers;
};

template <class S>
BoundMlp<S> bind(Tape<S>& tape, Mlp<S>& mlp, bool trainable) {
  BoundMlp<S> b;
  for (auto& l : mlp.layers) b.layers.push_back(bind(tape, l, trainable));
  return b;
}

template <class S>
Var<S> apply(const BoundMlp<S>& mlp, Var<S> x) {
  for (std::size_t i = 0; i + 1 < mlp.layers.size(); ++i) x = tanh(apply(mlp.layers[i], x));
  return apply(mlp.layers.back(), x);
}

/// Gated recurrent unit. Gate columns are laid out [update | reset | candidate].
template <class S>
struct GruCell {
  Parameter<S> input_weight;   // [in, 3H]
  Parameter<S> hidden_weight;  // [H, 3H]
  Parameter<S> bias;           // [1, 3H]

  GruCell() = default;
  GruCell(const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
    input_weight = {name + ".wx", rng.normal_matrix<S>(in, 3 * hidden) *
                                      static_cast<S>(1.0 / std::sqrt(static_cast<double>(in)))};
    hidden_weight = {name + ".wh", rng.normal_matrix<S>(hidden, 3 * hidden) *
                                       static_cast<S>(1.0 / std::sqrt(static_cast<double>(hidden)))};
    bias = {name + ".b", Matrix<S>::Zero(1, 3 * hidden)};
  }

  Eigen::Index hidden_dim() const { return hidden_weight.value.rows(); }
  Eigen::Index input_dim() const { return input_weight.value.rows(); }

  void collect(std::vector<Parameter<S>*>& out) {
    out.push_back(&input_weight);
    out.push_back(&hidden_weight);
    out.push_back(&bias);
  }
};

template <class S>
struct BoundGru {
  Var<S> input_weight;
  Var<S> gate_hidden_weight;       // [H, 2H] update and reset
  Var<S> candidate_hidden_weight;  // [H, H]
  Var<S> bias;
  Eigen::Index hidden = 0;
};

template <class S>
BoundGru<S> bind(Tape<S>& tape, GruCell<S>& cell, bool trainable) {
  const Eigen::Index h = cell.hidden_dim();
  Var<S> wh = tape.parameter(cell.hidden_weight, trainable);
  return {tape.parameter(cell.input_weight, trainable), slice(wh, 0, 2 * h), slice(wh, 2 * h, h),
          tape.parameter(cell.bias, trainable), h};
}

/// h' = u * h + (1 - u) * c with u, r = sigmoid(.), c = tanh(x Wc + (r * h) Uc + bc).
template <class S>
Var<S> gru_step(const BoundGru<S>& cell, const Var<S>& h, const Var<S>& x) {
  const Eigen::Index H = cell.hidden;
  require(h.cols() == H, "gru_step: hidden state width mismatch");
  require(x.cols() == cell.input_weight.rows(), "gru_step: input width mismatch");
  require(h.rows() == x.rows(), "gru_step: batch size mismatch");
  Var<S> gx = add_bias(matmul(x, cell.input_weight), cell.bias);
  Var<S> gh = matmul(h, cell.gate_hidden_weight);
  Var<S> update = sigmoid(add(slice(gx, 0, H), slice(gh, 0, H)));
  Var<S> reset = sigmoid(add(slice(gx, H, H), slice(gh, H, H)));
  Var<S> candidate = tanh(add(slice(gx, 2 * H, H), matmul(mul(reset, h), cell.candidate_hidden_weight)));
  return add(candidate, mul(update, sub(h, candidate)));
}

}  // namespace pbdr
