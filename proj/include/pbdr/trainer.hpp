#pragma once

// Training loop: collect real experience, then alternate world-model fitting
// with imagination-based actor-critic updates until the per-iteration budget
// of imagined state-transitions is spent.

#include "pbdr/actor_critic.hpp"
#include "pbdr/adam.hpp"
#include "pbdr/checkpoint.hpp"
#include "pbdr/config.hpp"
#include "pbdr/imagination.hpp"
#include "pbdr/replay.hpp"
#include "pbdr/tag_env.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace pbdr {

/// Every learned component of one agent, in 32-bit precision.
struct Agent {
  ModelDims dims;
  WorldModel<float> world_model;
  Policy<float> policy;
  Critic<float> critic;

  Agent(const ModelDims& d, Rng& init_rng);

  /// World model, actor, critic and critic target, in that order.
  std::vector<Parameter<float>*> parameters();
};

/// Builds an agent whose initialization is determined by `seed`.
std::unique_ptr<Agent> make_agent(const ModelDims& dims, std::uint64_t seed);

void save_agent(const std::string& path, Agent& agent, const TrainConfig& config);

struct LoadedAgent {
  TrainConfig config;
  std::unique_ptr<Agent> agent;
};

/// Throws CheckpointError on unreadable or mismatched checkpoints.
LoadedAgent load_agent(const std::string& path);

/// Runs the agent in the real environment: filters observations through the
/// posterior and picks actions from the policy. Parameters are snapshotted at
/// construction.
class AgentRunner {
 public:
  explicit AgentRunner(Agent& agent);

  void reset();
  /// Filters `obs` and returns the next action. Deterministic mode uses the
  /// posterior mean and the policy mean and leaves `rng` untouched.
  tag::Vec2 act(const tag::Observation& obs, Rng& rng, bool deterministic);
  /// Overrides the action fed back into the filter on the next act().
  void set_last_action(tag::Vec2 action);

 private:
  Agent& agent_;
  Tape<float> tape_;
  WorldModelVars<float> wm_;
  PolicyVars<float> policy_;
  std::size_t mark_ = 0;
  Matrix<float> h_;
  Matrix<float> z_;
  Matrix<float> prev_action_;
};

struct EvalResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> returns;
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean and standard deviation.
void summarize(const std::vector<double>& values, double& mean, double& std);

/// The fixed evaluation suite: episode seeds 0 .. count - 1.
std::vector<std::uint64_t> evaluation_seeds(int count);

/// One episode per seed with the zero-noise policy (or sampled actions when
/// `deterministic` is false, seeded from the episode seed).
EvalResult evaluate(Agent& agent, const std::vector<std::uint64_t>& episode_seeds, bool deterministic = true,
                    const tag::EnvConfig& env = {});

/// Same protocol for a hand-written controller.
EvalResult evaluate_controller(const std::function<tag::Vec2(const tag::EnvState&, Rng&)>& controller,
                               const std::vector<std::uint64_t>& episode_seeds, const tag::EnvConfig& env = {});

struct MetricsRow {
  int iteration = 0;
  long env_steps = 0;
  long imagined_steps = 0;
  long updates = 0;
  double loss_total = 0.0;
  double loss_recon = 0.0;
  double loss_dynamics = 0.0;
  double loss_representation = 0.0;
  double loss_reward = 0.0;
  double loss_continue = 0.0;
  double loss_ensemble = 0.0;
  double kl = 0.0;
  double loss_actor = 0.0;
  double loss_critic = 0.0;
  double disagreement_mean = 0.0;
  double disagreement_min = 0.0;
  double disagreement_max = 0.0;
  double disagreement_ma100 = 0.0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
};

const std::vector<std::string>& metrics_columns();
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

/// Parses a metrics CSV written by write_metrics_row.
std::vector<MetricsRow> read_metrics(std::istream& in);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  const TrainConfig& config() const { return config_; }
  Agent& agent() { return *agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long env_steps() const { return env_steps_; }
  long imagined_steps() const { return imagined_steps_; }
  int iteration() const { return iteration_; }
  /// Per-update disagreement values, oldest first.
  const std::vector<double>& disagreement_history() const { return disagreement_history_; }

  /// Appends exactly `n_steps` environment transitions. Until the buffer
  /// holds `warmup_episodes` episodes the actions are uniform random.
  void collect(long n_steps);

  /// Collect, update until the imagination budget is spent, evaluate.
  MetricsRow train_iteration();

 private:
  struct UpdateLosses {
    double total, recon, dynamics, representation, reward, cont, ensemble, kl, actor, critic, disagreement;
  };
  UpdateLosses update();

  TrainConfig config_;
  std::unique_ptr<Agent> agent_;
  ReplayBuffer buffer_;
  AdamState<float> world_opt_;
  AdamState<float> actor_opt_;
  AdamState<float> critic_opt_;
  ReturnNormalizer normalizer_;
  Rng env_rng_;
  Rng act_rng_;
  Rng replay_rng_;
  Rng latent_rng_;
  std::uint64_t imagination_seed_;
  std::unique_ptr<AgentRunner> runner_;
  tag::EnvState env_;
  Episode episode_;
  bool episode_open_ = false;
  long env_steps_ = 0;
  long imagined_steps_ = 0;
  long updates_ = 0;
  int iteration_ = 0;
  std::vector<double> disagreement_history_;
};

/// One row of the comparison table.
struct ComparisonRow {
  std::string model;
  int K = 1;
  int N = 1;
  int T = 1;
  std::vector<std::uint64_t> seeds;
  std::vector<double> seed_means;
  double mean = 0.0;
  double std = 0.0;
};

/// Called once the run directory exists, before the first iteration.
using RunStartHook = std::function<void(const TrainConfig&, const std::string& dir)>;

/// Trains one (config, seed) run, writing metrics.csv, timing.csv and
/// checkpoints into `dir` (created; must not exist). Returns the final
/// evaluation over config.eval_episodes fixed seeds.
EvalResult run_training(const TrainConfig& config, const std::string& dir,
                        const std::function<void(const MetricsRow&)>& on_row = {}, const RunStartHook& on_start = {});

/// Trains and evaluates every config over every seed. Every config is
/// validated before any training starts.
std::vector<ComparisonRow> run_experiment(const std::vector<TrainConfig>& configs,
                                          const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
                                          const std::function<void(const std::string&)>& progress = {},
                                          const RunStartHook& on_start = {});

/// "Model,K,N,T,mean,std" rows.
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);
/// Aligned text table with columns Model, K, N, T, Performance.
void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows, int seed_count);

}  // namespace pbdr
