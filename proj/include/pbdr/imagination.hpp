#pragma once

// Particle-based latent imagination with beam branching.
//
// Each replay start state spawns K particles. Every step each particle branches
// into N policy actions, every branch advances one step through the prior, is
// scored by F = V(h, z) + beta * disagreement, and K branches per start
// survive. With K = N = 1 this reduces exactly to a single-sample rollout.

#include "pbdr/actor_critic.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pbdr {

enum class PruneMode { TopK, SoftResample };

const char* to_string(PruneMode mode);
PruneMode parse_prune_mode(const std::string& text);

struct ImaginationConfig {
  int particles = 1;  // K
  int branches = 1;   // N
  int horizon = 16;   // T
  double beta = 0.1;
  PruneMode prune = PruneMode::TopK;
  double temperature = 1.0;
  /// Sample each step's latent from a uniformly chosen prior head instead of
  /// the canonical one.
  bool random_prior_member = false;

  void validate() const;
};

/// Independent streams for each source of randomness in a rollout.
struct ImaginationRngs {
  Rng action;
  Rng latent;
  Rng resample;

  explicit ImaginationRngs(std::uint64_t seed) : action(seed, 1), latent(seed, 2), resample(seed, 3) {}
};

/// Free-energy score of a branch.
inline double score(double value, double disagreement, double beta) { return value + beta * disagreement; }

/// Systematic resampling: one offset u ~ U[0, 1/K), picks at the cumulative
/// weight crossings of u + j/K. Output indices are non-decreasing.
std::vector<int> systematic_resample(std::span<const double> weights, int count, Rng& rng);

/// Picks `keep` of the given branch scores. TopK keeps the highest (ties to the
/// lower index) and returns them in ascending index order; SoftResample draws
/// systematically with weights proportional to exp(score / temperature).
/// Keeping every branch is the identity.
std::vector<int> prune(std::span<const double> scores, int keep, PruneMode mode, Rng& rng,
                       double temperature = 1.0);

/// Prunes consecutive groups of `group_size` branches independently and
/// returns global branch indices, group by group.
std::vector<int> prune_groups(std::span<const double> scores, int group_size, int keep, PruneMode mode, Rng& rng,
                              double temperature = 1.0);

/// Plain per-branch record, kept for diagnostics.
struct Branch {
  int parent = 0;
  double action_x = 0.0;
  double action_y = 0.0;
  double predicted_reward = 0.0;
  double value = 0.0;
  double disagreement = 0.0;
  double score = 0.0;
};

struct DreamStepLog {
  std::vector<Branch> branches;
  std::vector<int> survivors;
};

/// Rows are particles, laid out start-major: row = start * K + k.
template <class S>
struct ParticleSet {
  LatentState<S> state;
  std::vector<int> lineage;  // originating start index per row
};

template <class S>
struct BranchSet {
  LatentState<S> next;
  Var<S> action;
  Var<S> log_prob;
  Var<S> entropy;
  Var<S> reward;
  Var<S> cont;
  Var<S> value;
  Matrix<S> disagreement;
  std::vector<int> parent;
  std::vector<double> scores;
};

/// Start states: the deterministic state and the posterior that produced z.
template <class S>
struct StartStates {
  Matrix<S> h;
  Matrix<S> post_mean;
  Matrix<S> post_log_std;

  Eigen::Index count() const { return h.rows(); }
};

template <class S>
struct ImaginedTrajectory {
  int starts = 0;
  int particles = 0;
  std::vector<LatentState<S>> states;  // T + 1 entries, starts * K rows each
  // Per step t, one row per survivor at t + 1.
  std::vector<Var<S>> actions;
  std::vector<Var<S>> log_probs;
  std::vector<Var<S>> entropies;
  std::vector<Var<S>> rewards;
  std::vector<Var<S>> continues;
  std::vector<Var<S>> values;
  std::vector<std::vector<int>> parents;  // parents[t][j]: row of states[t]
  std::vector<DreamStepLog> log;

  int horizon() const { return static_cast<int>(actions.size()); }
};

/// Replicates each start K times and draws a fresh z per particle from the
/// start's posterior.
template <class S>
ParticleSet<S> init_particles(Tape<S>& tape, const StartStates<S>& start, int K, Rng& rng) {
  require(K >= 1, "init_particles: K must be at least 1");
  std::vector<int> rep;
  for (Eigen::Index b = 0; b < start.count(); ++b) {
    for (int k = 0; k < K; ++k) rep.push_back(static_cast<int>(b));
  }
  GaussianParams<S> post{gather_rows(tape.constant(start.post_mean), std::span<const int>(rep)),
                         gather_rows(tape.constant(start.post_log_std), std::span<const int>(rep))};
  Var<S> h = gather_rows(tape.constant(start.h), std::span<const int>(rep));
  return {{h, gaussian_sample(post, rng)}, rep};
}

/// Expands every particle into N sampled actions, advances each branch one
/// prior step and scores it.
template <class S>
BranchSet<S> branch_particles(const WorldModelVars<S>& wm, const PolicyVars<S>& policy,
                              const CriticVars<S>& critic, const LatentState<S>& particles, int N, double beta,
                              ImaginationRngs& rngs, int member = 0) {
  require(N >= 1, "branch_particles: N must be at least 1");
  const Eigen::Index rows = particles.h.rows();
  BranchSet<S> out;
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (int n = 0; n < N; ++n) out.parent.push_back(static_cast<int>(p));
  }
  LatentState<S> from{gather_rows(particles.h, std::span<const int>(out.parent)),
                      gather_rows(particles.z, std::span<const int>(out.parent))};
  PolicySample<S> act = policy_sample(policy, from, rngs.action);
  ImagineOutput<S> step = imagine_step(wm, from, act.action, rngs.latent, member);
  out.next = step.state;
  out.action = act.action;
  out.log_prob = act.log_prob;
  out.entropy = act.entropy;
  out.reward = predict_reward(wm, out.next);
  out.cont = sigmoid(predict_continue_logit(wm, out.next));
  out.value = critic_value(critic, out.next);
  const Eigen::Index total = out.next.h.rows();
  out.disagreement = wm.priors.size() >= 2 ? ensemble_disagreement(wm, out.next.h) : Matrix<S>::Zero(total, 1);
  out.scores.resize(static_cast<std::size_t>(total));
  for (Eigen::Index i = 0; i < total; ++i) {
    out.scores[static_cast<std::size_t>(i)] =
        score(static_cast<double>(out.value.value()(i, 0)), static_cast<double>(out.disagreement(i, 0)), beta);
  }
  return out;
}

/// K-particle, N-beam rollout of `config.horizon` steps from every start.
template <class S>
ImaginedTrajectory<S> imagine_rollout(const WorldModelVars<S>& wm, const PolicyVars<S>& policy,
                                      const CriticVars<S>& critic, const StartStates<S>& start,
                                      const ImaginationConfig& config, ImaginationRngs& rngs) {
  config.validate();
  Tape<S>& tape = *wm.tape;
  const int K = config.particles, N = config.branches;
  ImaginedTrajectory<S> traj;
  traj.starts = static_cast<int>(start.count());
  traj.particles = K;
  ParticleSet<S> particles = init_particles(tape, start, K, rngs.latent);
  traj.states.push_back(particles.state);

  for (int t = 0; t < config.horizon; ++t) {
    int member = 0;
    if (config.random_prior_member) {
      member = static_cast<int>(rngs.resample.uniform() * static_cast<double>(wm.priors.size()));
    }
    BranchSet<S> br = branch_particles(wm, policy, critic, traj.states.back(), N, config.beta, rngs, member);
    std::vector<int> keep = prune_groups(std::span<const double>(br.scores), K * N, K, config.prune, rngs.resample,
                                         config.temperature);
    const std::span<const int> idx(keep);

    DreamStepLog log;
    for (std::size_t i = 0; i < br.scores.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      log.branches.push_back({br.parent[i], static_cast<double>(br.action.value()(r, 0)),
                              static_cast<double>(br.action.value()(r, 1)),
                              static_cast<double>(br.reward.value()(r, 0)),
                              static_cast<double>(br.value.value()(r, 0)),
                              static_cast<double>(br.disagreement(r, 0)), br.scores[i]});
    }
    log.survivors = keep;
    traj.log.push_back(std::move(log));

    std::vector<int> parents;
    for (int k : keep) parents.push_back(br.parent[static_cast<std::size_t>(k)]);
    traj.parents.push_back(std::move(parents));
    traj.states.push_back({gather_rows(br.next.h, idx), gather_rows(br.next.z, idx)});
    traj.actions.push_back(gather_rows(br.action, idx));
    traj.log_probs.push_back(gather_rows(br.log_prob, idx));
    traj.entropies.push_back(gather_rows(br.entropy, idx));
    traj.rewards.push_back(gather_rows(br.reward, idx));
    traj.continues.push_back(gather_rows(br.cont, idx));
    traj.values.push_back(gather_rows(br.value, idx));
  }
  return traj;
}

/// Single-sample rollout: one latent draw at the start, one action and one
/// prior step per time step, no scoring or pruning.
template <class S>
ImaginedTrajectory<S> imagine_rollout_single(const WorldModelVars<S>& wm, const PolicyVars<S>& policy,
                                             const CriticVars<S>& critic, const StartStates<S>& start, int horizon,
                                             ImaginationRngs& rngs) {
  require(horizon >= 1, "imagine_rollout_single: horizon must be at least 1");
  Tape<S>& tape = *wm.tape;
  ImaginedTrajectory<S> traj;
  traj.starts = static_cast<int>(start.count());
  traj.particles = 1;
  GaussianParams<S> post{tape.constant(start.post_mean), tape.constant(start.post_log_std)};
  LatentState<S> state{tape.constant(start.h), gaussian_sample(post, rngs.latent)};
  traj.states.push_back(state);
  std::vector<int> identity(static_cast<std::size_t>(start.count()));
  for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<int>(i);

  for (int t = 0; t < horizon; ++t) {
    PolicySample<S> act = policy_sample(policy, state, rngs.action);
    state = imagine_step(wm, state, act.action, rngs.latent).state;
    traj.states.push_back(state);
    traj.actions.push_back(act.action);
    traj.log_probs.push_back(act.log_prob);
    traj.entropies.push_back(act.entropy);
    traj.rewards.push_back(predict_reward(wm, state));
    traj.continues.push_back(sigmoid(predict_continue_logit(wm, state)));
    traj.values.push_back(critic_value(critic, state));
    traj.parents.push_back(identity);
  }
  return traj;
}

/// The trajectory re-indexed along each final survivor's ancestry: row j of
/// every entry belongs to the path ending at survivor j.
template <class S>
struct TrajectoryPaths {
  std::vector<LatentState<S>> states;  // T + 1
  std::vector<Var<S>> actions;         // T
  std::vector<Var<S>> log_probs;
  std::vector<Var<S>> entropies;
  std::vector<Var<S>> rewards;
  std::vector<Var<S>> continues;
};

template <class S>
TrajectoryPaths<S> trace_paths(const ImaginedTrajectory<S>& traj) {
  const std::size_t T = traj.actions.size();
  require(traj.states.size() == T + 1 && traj.parents.size() == T, "trace_paths: malformed trajectory");
  std::vector<std::vector<int>> rows(T + 1);
  rows[T].resize(static_cast<std::size_t>(traj.states[T].h.rows()));
  for (std::size_t j = 0; j < rows[T].size(); ++j) rows[T][j] = static_cast<int>(j);
  for (std::size_t t = T; t-- > 0;) {
    rows[t].resize(rows[t + 1].size());
    for (std::size_t j = 0; j < rows[t].size(); ++j) {
      rows[t][j] = traj.parents[t][static_cast<std::size_t>(rows[t + 1][j])];
    }
  }
  TrajectoryPaths<S> out;
  for (std::size_t t = 0; t <= T; ++t) {
    const std::span<const int> idx(rows[t]);
    out.states.push_back({gather_rows(traj.states[t].h, idx), gather_rows(traj.states[t].z, idx)});
  }
  for (std::size_t t = 0; t < T; ++t) {
    const std::span<const int> idx(rows[t + 1]);
    out.actions.push_back(gather_rows(traj.actions[t], idx));
    out.log_probs.push_back(gather_rows(traj.log_probs[t], idx));
    out.entropies.push_back(gather_rows(traj.entropies[t], idx));
    out.rewards.push_back(gather_rows(traj.rewards[t], idx));
    out.continues.push_back(gather_rows(traj.continues[t], idx));
  }
  return out;
}

/// Per-branch CSV: step, branch, parent, predicted_reward, value,
/// disagreement, score, survived.
void write_dream_log(std::ostream& out, const std::vector<DreamStepLog>& log);

}  // namespace pbdr
