#pragma once

// Recurrent state-space world model with Gaussian latents.
//
// The deterministic state h advances through a GRU fed with the previous
// latent and action. The posterior sees h and an encoded observation; the
// prior ensemble sees h alone. Member 0 of the ensemble is the canonical
// prior: it drives imagination and both KL losses. The remaining members only
// exist to measure epistemic disagreement.

#include "pbdr/gaussian.hpp"
#include "pbdr/layers.hpp"
#include "pbdr/tag_env.hpp"

#include <string>
#include <vector>

namespace pbdr {

struct ModelDims {
  Eigen::Index obs = tag::kObservationDim;
  Eigen::Index action = 2;
  Eigen::Index deter = 128;
  Eigen::Index stoch = 16;
  Eigen::Index embed = 64;
  Eigen::Index units = 64;
  int ensemble = 5;

  Eigen::Index feature() const { return deter + stoch; }
};

struct WorldModelLossConfig {
  double free_bits = 1.0;
  double beta_dyn = 1.0;
  double beta_rep = 0.1;
};

/// Batched RSSM state; every row is one (h, z) pair.
template <class S>
struct LatentState {
  Var<S> h;
  Var<S> z;
};

template <class S>
Var<S> features(const LatentState<S>& s) {
  return concat<S>({s.h, s.z});
}

template <class S>
class WorldModel {
 public:
  ModelDims dims;
  Mlp<S> encoder;
  Mlp<S> posterior;
  std::vector<Mlp<S>> priors;
  GruCell<S> dynamics;
  Mlp<S> decoder;
  Mlp<S> reward;
  Mlp<S> cont;

  WorldModel(const ModelDims& d, Rng& rng) : dims(d) {
    require(d.ensemble >= 1, "world model needs at least one prior head");
    const std::vector<Eigen::Index> hidden{d.units};
    encoder = Mlp<S>("wm.encoder", d.obs, hidden, d.embed, rng);
    posterior = Mlp<S>("wm.posterior", d.deter + d.embed, hidden, 2 * d.stoch, rng);
    for (int i = 0; i < d.ensemble; ++i) {
      priors.emplace_back("wm.prior" + std::to_string(i), d.deter, hidden, 2 * d.stoch, rng);
    }
    dynamics = GruCell<S>("wm.gru", d.stoch + d.action, d.deter, rng);
    decoder = Mlp<S>("wm.decoder", d.feature(), hidden, d.obs, rng);
    reward = Mlp<S>("wm.reward", d.feature(), hidden, 1, rng, 0.1);
    cont = Mlp<S>("wm.cont", d.feature(), hidden, 1, rng, 0.1);
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    encoder.collect(out);
    posterior.collect(out);
    for (auto& p : priors) p.collect(out);
    dynamics.collect(out);
    decoder.collect(out);
    reward.collect(out);
    cont.collect(out);
    return out;
  }
};

/// A WorldModel placed on a Tape.
template <class S>
struct WorldModelVars {
  ModelDims dims;
  BoundMlp<S> encoder;
  BoundMlp<S> posterior;
  std::vector<BoundMlp<S>> priors;
  BoundGru<S> dynamics;
  BoundMlp<S> decoder;
  BoundMlp<S> reward;
  BoundMlp<S> cont;
  Tape<S>* tape = nullptr;
};

template <class S>
WorldModelVars<S> bind(Tape<S>& tape, WorldModel<S>& wm, bool trainable) {
  WorldModelVars<S> v;
  v.dims = wm.dims;
  v.encoder = bind(tape, wm.encoder, trainable);
  v.posterior = bind(tape, wm.posterior, trainable);
  for (auto& p : wm.priors) v.priors.push_back(bind(tape, p, trainable));
  v.dynamics = bind(tape, wm.dynamics, trainable);
  v.decoder = bind(tape, wm.decoder, trainable);
  v.reward = bind(tape, wm.reward, trainable);
  v.cont = bind(tape, wm.cont, trainable);
  v.tape = &tape;
  return v;
}

/// h = 0, z = 0 for `rows` sequences.
template <class S>
LatentState<S> initial_state(const WorldModelVars<S>& wm, Eigen::Index rows) {
  return {wm.tape->constant(Matrix<S>::Zero(rows, wm.dims.deter)),
          wm.tape->constant(Matrix<S>::Zero(rows, wm.dims.stoch))};
}

template <class S>
Var<S> transition(const WorldModelVars<S>& wm, const LatentState<S>& prev, const Var<S>& action) {
  require(action.cols() == wm.dims.action, "transition: action width mismatch");
  return gru_step(wm.dynamics, prev.h, concat<S>({prev.z, action}));
}

template <class S>
GaussianParams<S> prior(const WorldModelVars<S>& wm, const Var<S>& h, int member = 0) {
  require(member >= 0 && member < static_cast<int>(wm.priors.size()), "prior: member out of range");
  return gaussian_from_head(apply(wm.priors[static_cast<std::size_t>(member)], h));
}

template <class S>
GaussianParams<S> posterior(const WorldModelVars<S>& wm, const Var<S>& h, const Var<S>& obs) {
  require(obs.cols() == wm.dims.obs, "posterior: observation width mismatch");
  Var<S> embed = tanh(apply(wm.encoder, obs));
  return gaussian_from_head(apply(wm.posterior, concat<S>({h, embed})));
}

template <class S>
struct ObserveOutput {
  LatentState<S> state;
  GaussianParams<S> posterior;
  GaussianParams<S> prior;
};

template <class S>
struct ImagineOutput {
  LatentState<S> state;
  GaussianParams<S> prior;
};

/// Filters one observation: advance h, then sample z from the posterior.
template <class S>
ObserveOutput<S> observe_step(const WorldModelVars<S>& wm, const LatentState<S>& prev, const Var<S>& action,
                              const Var<S>& obs, Rng& rng) {
  Var<S> h = transition(wm, prev, action);
  GaussianParams<S> pri = prior(wm, h, 0);
  GaussianParams<S> post = posterior(wm, h, obs);
  return {{h, gaussian_sample(post, rng)}, post, pri};
}

/// Dreams one step: advance h, then sample z from prior member `member`.
template <class S>
ImagineOutput<S> imagine_step(const WorldModelVars<S>& wm, const LatentState<S>& prev, const Var<S>& action,
                              Rng& rng, int member = 0) {
  Var<S> h = transition(wm, prev, action);
  GaussianParams<S> pri = prior(wm, h, member);
  return {{h, gaussian_sample(pri, rng)}, pri};
}

template <class S>
Var<S> decode(const WorldModelVars<S>& wm, const LatentState<S>& s) {
  return apply(wm.decoder, features(s));
}

/// Predicted reward per row, [m, 1].
template <class S>
Var<S> predict_reward(const WorldModelVars<S>& wm, const LatentState<S>& s) {
  return apply(wm.reward, features(s));
}

/// Continuation logit per row, [m, 1].
template <class S>
Var<S> predict_continue_logit(const WorldModelVars<S>& wm, const LatentState<S>& s) {
  return apply(wm.cont, features(s));
}

/// Population variance of the prior-head means across members, averaged over
/// latent dimensions. One value per row of `means[0]`.
template <class S>
Matrix<S> disagreement_from_means(const std::vector<Matrix<S>>& means) {
  require(means.size() >= 2, "ensemble_disagreement: needs at least two prior heads");
  const S count = static_cast<S>(means.size());
  Matrix<S> avg = Matrix<S>::Zero(means[0].rows(), means[0].cols());
  for (const auto& m : means) avg += m;
  avg /= count;
  Matrix<S> var = Matrix<S>::Zero(avg.rows(), avg.cols());
  for (const auto& m : means) var.array() += (m - avg).array().square();
  var /= count;
  return var.rowwise().mean();
}

/// Ensemble disagreement on deterministic states h, [m, 1]. Not differentiated.
template <class S>
Matrix<S> ensemble_disagreement(const WorldModelVars<S>& wm, const Var<S>& h) {
  require(wm.priors.size() >= 2, "ensemble_disagreement: needs at least two prior heads");
  std::vector<Matrix<S>> means;
  for (int i = 0; i < static_cast<int>(wm.priors.size()); ++i) means.push_back(prior(wm, h, i).mean.value());
  return disagreement_from_means(means);
}

/// Replay sequences, time-major: element t holds the batch at step t.
/// actions[t] is the action that led to observations[t] (zero at episode
/// start); rewards[t] is the reward received on arriving there.
template <class S>
struct SequenceBatch {
  std::vector<Matrix<S>> observations;  // L x [B, obs]
  std::vector<Matrix<S>> actions;       // L x [B, action]
  std::vector<Matrix<S>> rewards;       // L x [B, 1]
  std::vector<Matrix<S>> continues;     // L x [B, 1]

  Eigen::Index batch() const { return observations.empty() ? 0 : observations.front().rows(); }
  Eigen::Index length() const { return static_cast<Eigen::Index>(observations.size()); }
};

template <class S>
struct WorldModelLoss {
  Var<S> total;
  Var<S> recon;
  Var<S> dynamics;
  Var<S> representation;
  Var<S> reward;
  Var<S> cont;
  /// Sum over every prior head of KL(stop_grad(posterior) || head), unclamped.
  Var<S> ensemble;
  /// Same sum restricted to the non-canonical heads (members 1..E-1).
  Var<S> ensemble_aux;
  /// Mean unclamped KL(posterior || canonical prior).
  double kl = 0.0;
  /// Mean ensemble disagreement over every filtered h in the batch.
  double disagreement = 0.0;
  /// Posterior at the final step of every sequence, detached.
  Matrix<S> last_h;
  Matrix<S> last_post_mean;
  Matrix<S> last_post_log_std;
};

/// Filters every sequence from a zero state and returns the averaged losses.
template <class S>
WorldModelLoss<S> world_model_loss(const WorldModelVars<S>& wm, const SequenceBatch<S>& batch, Rng& rng,
                                   const WorldModelLossConfig& cfg = {}) {
  const Eigen::Index L = batch.length();
  const Eigen::Index B = batch.batch();
  require(L >= 2, "world_model_loss: sequence length must be at least 2");
  require(B >= 1, "world_model_loss: empty batch");
  require(static_cast<Eigen::Index>(batch.actions.size()) == L &&
              static_cast<Eigen::Index>(batch.rewards.size()) == L &&
              static_cast<Eigen::Index>(batch.continues.size()) == L,
          "world_model_loss: ragged batch");
  Tape<S>& tape = *wm.tape;
  const S fb = static_cast<S>(cfg.free_bits);
  const int members = static_cast<int>(wm.priors.size());

  LatentState<S> state = initial_state(wm, B);
  Var<S> recon, dyn, rep, rew, con, ens, ens_aux;
  auto accumulate = [](Var<S>& acc, const Var<S>& term) { acc = acc.valid() ? add(acc, term) : term; };
  double kl_total = 0.0;
  double disagreement_total = 0.0;
  GaussianParams<S> last_post;

  for (Eigen::Index t = 0; t < L; ++t) {
    Var<S> obs = tape.constant(batch.observations[t]);
    ObserveOutput<S> step = observe_step(wm, state, tape.constant(batch.actions[t]), obs, rng);
    state = step.state;
    last_post = step.posterior;

    accumulate(recon, scale(row_sum(square(sub(decode(wm, state), obs))), S(0.5)));
    accumulate(rew, square(sub(predict_reward(wm, state), tape.constant(batch.rewards[t]))));
    Var<S> logit = predict_continue_logit(wm, state);
    Var<S> target = tape.constant(batch.continues[t]);
    accumulate(con, sub(softplus(logit), mul(target, logit)));

    GaussianParams<S> post_sg = stop_gradient(step.posterior);
    Var<S> kl_dyn = gaussian_kl_rows(post_sg, step.prior);
    kl_total += kl_dyn.value().sum();
    accumulate(dyn, maximum(kl_dyn, fb));
    accumulate(rep, maximum(gaussian_kl_rows(step.posterior, stop_gradient(step.prior)), fb));

    accumulate(ens, kl_dyn);
    std::vector<Matrix<S>> means{step.prior.mean.value()};
    for (int m = 1; m < members; ++m) {
      GaussianParams<S> head = prior(wm, state.h, m);
      Var<S> kl = gaussian_kl_rows(post_sg, head);
      accumulate(ens, kl);
      accumulate(ens_aux, kl);
      means.push_back(head.mean.value());
    }
    if (members >= 2) disagreement_total += disagreement_from_means(means).sum();
  }

  const S norm = S(1) / static_cast<S>(B * L);
  WorldModelLoss<S> out;
  out.recon = scale(sum(recon), norm);
  out.dynamics = scale(sum(dyn), norm);
  out.representation = scale(sum(rep), norm);
  out.reward = scale(sum(rew), norm);
  out.cont = scale(sum(con), norm);
  out.ensemble = scale(sum(ens), norm);
  out.ensemble_aux = ens_aux.valid() ? scale(sum(ens_aux), norm) : tape.constant(Matrix<S>::Zero(1, 1));
  out.total = add(add(add(out.recon, scale(out.dynamics, static_cast<S>(cfg.beta_dyn))),
                      scale(out.representation, static_cast<S>(cfg.beta_rep))),
                  add(out.reward, out.cont));
  out.kl = kl_total / static_cast<double>(B * L);
  out.disagreement = disagreement_total / static_cast<double>(B * L);
  out.last_h = state.h.value();
  out.last_post_mean = last_post.mean.value();
  out.last_post_log_std = last_post.log_std.value();
  return out;
}

/// Every prior head fit independently to the detached posterior; summed.
template <class S>
Var<S> train_ensemble_loss(const WorldModelVars<S>& wm, const SequenceBatch<S>& batch, Rng& rng) {
  return world_model_loss(wm, batch, rng).ensemble;
}

}  // namespace pbdr
