#include "pbdr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace pbdr {

namespace fs = std::filesystem;

Agent::Agent(const ModelDims& d, Rng& init_rng)
    : dims(d), world_model(d, init_rng), policy(d, init_rng), critic(d, init_rng) {}

std::vector<Parameter<float>*> Agent::parameters() {
  std::vector<Parameter<float>*> out = world_model.parameters();
  for (auto* p : policy.parameters()) out.push_back(p);
  for (auto* p : critic.parameters()) out.push_back(p);
  for (auto* p : critic.target_parameters()) out.push_back(p);
  return out;
}

std::unique_ptr<Agent> make_agent(const ModelDims& dims, std::uint64_t seed) {
  Rng init(seed, 100);
  return std::make_unique<Agent>(dims, init);
}

void save_agent(const std::string& path, Agent& agent, const TrainConfig& config) {
  Checkpoint ckpt;
  for (const auto& [key, value] : config_entries(config)) ckpt.meta["config." + key] = value;
  append_parameters(ckpt, agent.parameters());
  write_checkpoint(path, ckpt);
}

LoadedAgent load_agent(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  std::string text;
  for (const auto& [key, value] : ckpt.meta) {
    if (key.rfind("config.", 0) == 0) text += key.substr(7) + " = " + value + "\n";
  }
  if (text.empty()) throw CheckpointError(path + ": no config metadata");
  LoadedAgent out;
  try {
    out.config = parse_config(text, path);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid config metadata: ") + e.what());
  }
  out.agent = make_agent(out.config.dims, out.config.seed);
  restore_parameters(ckpt, out.agent->parameters());
  return out;
}

AgentRunner::AgentRunner(Agent& agent) : agent_(agent) {
  wm_ = bind(tape_, agent_.world_model, false);
  policy_ = bind(tape_, agent_.policy, false);
  mark_ = tape_.size();
  reset();
}

void AgentRunner::reset() {
  h_ = Matrix<float>::Zero(1, agent_.dims.deter);
  z_ = Matrix<float>::Zero(1, agent_.dims.stoch);
  prev_action_ = Matrix<float>::Zero(1, agent_.dims.action);
}

tag::Vec2 AgentRunner::act(const tag::Observation& obs, Rng& rng, bool deterministic) {
  tape_.rewind(mark_);
  Matrix<float> o(1, tag::kObservationDim);
  for (int i = 0; i < tag::kObservationDim; ++i) o(0, i) = static_cast<float>(obs[static_cast<std::size_t>(i)]);
  LatentState<float> prev{tape_.constant(h_), tape_.constant(z_)};
  Var<float> h = transition(wm_, prev, tape_.constant(prev_action_));
  GaussianParams<float> post = posterior(wm_, h, tape_.constant(o));
  Var<float> z = deterministic ? post.mean : gaussian_sample(post, rng);
  PolicySample<float> sample = policy_sample(policy_, LatentState<float>{h, z}, rng, deterministic);
  h_ = h.value();
  z_ = z.value();
  prev_action_ = sample.action.value();
  return {static_cast<double>(prev_action_(0, 0)), static_cast<double>(prev_action_(0, 1))};
}

void AgentRunner::set_last_action(tag::Vec2 action) {
  prev_action_(0, 0) = static_cast<float>(action.x);
  prev_action_(0, 1) = static_cast<float>(action.y);
}

void summarize(const std::vector<double>& values, double& mean, double& std) {
  mean = 0.0;
  std = 0.0;
  if (values.empty()) return;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  for (double v : values) std += (v - mean) * (v - mean);
  std = std::sqrt(std / static_cast<double>(values.size()));
}

std::vector<std::uint64_t> evaluation_seeds(int count) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(std::max(count, 0)));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  return seeds;
}

EvalResult evaluate_controller(const std::function<tag::Vec2(const tag::EnvState&, Rng&)>& controller,
                               const std::vector<std::uint64_t>& episode_seeds, const tag::EnvConfig& env) {
  EvalResult out;
  out.seeds = episode_seeds;
  for (std::uint64_t seed : episode_seeds) {
    tag::EnvState state = tag::reset(seed, env);
    Rng rng(seed, 77);
    double ret = 0.0;
    while (!tag::is_done(state, env)) ret += tag::step(state, controller(state, rng), env).reward;
    out.returns.push_back(ret);
  }
  summarize(out.returns, out.mean, out.std);
  return out;
}

EvalResult evaluate(Agent& agent, const std::vector<std::uint64_t>& episode_seeds, bool deterministic,
                    const tag::EnvConfig& env) {
  EvalResult out;
  out.seeds = episode_seeds;
  AgentRunner runner(agent);
  for (std::uint64_t seed : episode_seeds) {
    tag::EnvState state = tag::reset(seed, env);
    runner.reset();
    Rng rng(seed, 77);
    tag::Observation obs = tag::observe(state);
    double ret = 0.0;
    while (!tag::is_done(state, env)) {
      const tag::StepResult r = tag::step(state, runner.act(obs, rng, deterministic), env);
      ret += r.reward;
      obs = r.observation;
    }
    out.returns.push_back(ret);
  }
  summarize(out.returns, out.mean, out.std);
  return out;
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "iteration",          "env_steps",        "imagined_steps",    "updates",
      "loss_total",         "loss_recon",       "loss_dynamics",     "loss_representation",
      "loss_reward",        "loss_continue",    "loss_ensemble",     "kl",
      "loss_actor",         "loss_critic",      "disagreement_mean", "disagreement_min",
      "disagreement_max",   "disagreement_ma100", "eval_return_mean", "eval_return_std"};
  return cols;
}

void write_metrics_header(std::ostream& out) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.iteration << ',' << r.env_steps << ',' << r.imagined_steps << ',' << r.updates;
  for (double v : {r.loss_total, r.loss_recon, r.loss_dynamics, r.loss_representation, r.loss_reward,
                   r.loss_continue, r.loss_ensemble, r.kl, r.loss_actor, r.loss_critic, r.disagreement_mean,
                   r.disagreement_min, r.disagreement_max, r.disagreement_ma100, r.eval_return_mean,
                   r.eval_return_std}) {
    out << ',' << fmt(v);
  }
  out << '\n';
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics file is empty");
  std::string expected;
  for (std::size_t i = 0; i < metrics_columns().size(); ++i) expected += (i ? "," : "") + metrics_columns()[i];
  if (line != expected) throw std::runtime_error("metrics header does not match the expected schema");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != metrics_columns().size()) throw std::runtime_error("metrics row has the wrong column count");
    MetricsRow r;
    r.iteration = static_cast<int>(v[0]);
    r.env_steps = static_cast<long>(v[1]);
    r.imagined_steps = static_cast<long>(v[2]);
    r.updates = static_cast<long>(v[3]);
    double* fields[] = {&r.loss_total,       &r.loss_recon,        &r.loss_dynamics,     &r.loss_representation,
                        &r.loss_reward,      &r.loss_continue,     &r.loss_ensemble,     &r.kl,
                        &r.loss_actor,       &r.loss_critic,       &r.disagreement_mean, &r.disagreement_min,
                        &r.disagreement_max, &r.disagreement_ma100, &r.eval_return_mean, &r.eval_return_std};
    for (std::size_t i = 0; i < std::size(fields); ++i) *fields[i] = v[4 + i];
    rows.push_back(r);
  }
  return rows;
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config),
      buffer_(config.buffer_capacity),
      world_opt_(static_cast<float>(config.lr_world)),
      actor_opt_(static_cast<float>(config.lr_actor)),
      critic_opt_(static_cast<float>(config.lr_critic)),
      env_rng_(config.seed, 10),
      act_rng_(config.seed, 11),
      replay_rng_(config.seed, 12),
      latent_rng_(config.seed, 13) {
  validate(config_);
  agent_ = make_agent(config_.dims, config_.seed);
  imagination_seed_ = Rng(config_.seed, 14).next_u64();
}

void Trainer::collect(long n_steps) {
  AgentRunner runner(*agent_);
  for (long i = 0; i < n_steps; ++i) {
    if (!episode_open_) {
      env_ = tag::reset(env_rng_.next_u64());
      runner.reset();
      episode_ = Episode{};
      std::array<float, tag::kObservationDim> o{};
      const tag::Observation obs = tag::observe(env_);
      for (int d = 0; d < tag::kObservationDim; ++d) o[d] = static_cast<float>(obs[d]);
      episode_.observations.push_back(o);
      episode_.actions.push_back({0.0f, 0.0f});
      episode_.rewards.push_back(0.0f);
      episode_.continues.push_back(1.0f);
      episode_open_ = true;
    }
    tag::Observation obs{};
    for (int d = 0; d < tag::kObservationDim; ++d) obs[d] = episode_.observations.back()[d];
    tag::Vec2 action = runner.act(obs, act_rng_, false);
    if (static_cast<int>(buffer_.episode_count()) < config_.warmup_episodes) {
      action = {act_rng_.uniform(-1.0, 1.0), act_rng_.uniform(-1.0, 1.0)};
      runner.set_last_action(action);
    }
    const tag::StepResult r = tag::step(env_, action);
    ++env_steps_;
    std::array<float, tag::kObservationDim> o{};
    for (int d = 0; d < tag::kObservationDim; ++d) o[d] = static_cast<float>(r.observation[d]);
    episode_.observations.push_back(o);
    episode_.actions.push_back({static_cast<float>(action.x), static_cast<float>(action.y)});
    episode_.rewards.push_back(static_cast<float>(r.reward));
    episode_.continues.push_back(r.done ? 0.0f : 1.0f);
    if (r.done) {
      buffer_.add(std::move(episode_));
      episode_open_ = false;
    }
  }
}

Trainer::UpdateLosses Trainer::update() {
  Agent& agent = *agent_;
  UpdateLosses out{};
  const SequenceBatch<float> batch = buffer_.sample(config_.batch, config_.seq_len, replay_rng_);
  const float clip = static_cast<float>(config_.grad_clip);

  // World model and prior ensemble.
  StartStates<float> start;
  {
    Tape<float> tape;
    WorldModelVars<float> wm = bind(tape, agent.world_model, true);
    WorldModelLoss<float> loss = world_model_loss(wm, batch, latent_rng_, config_.loss);
    tape.backward(add(loss.total, loss.ensemble_aux));
    auto params = agent.world_model.parameters();
    auto grads = tape.parameter_grads(params);
    clip_grad_norm(grads, clip);
    adam_step(params, grads, world_opt_);
    out.total = loss.total.value()(0, 0);
    out.recon = loss.recon.value()(0, 0);
    out.dynamics = loss.dynamics.value()(0, 0);
    out.representation = loss.representation.value()(0, 0);
    out.reward = loss.reward.value()(0, 0);
    out.cont = loss.cont.value()(0, 0);
    out.ensemble = loss.ensemble.value()(0, 0);
    out.kl = loss.kl;
    out.disagreement = loss.disagreement;
    start = {loss.last_h, loss.last_post_mean, loss.last_post_log_std};
  }

  // Actor: lambda-returns backpropagated through imagined dynamics.
  const float gamma = static_cast<float>(config_.gamma);
  const float lambda = static_cast<float>(config_.lambda);
  std::vector<Matrix<float>> path_h, path_z, path_targets;
  {
    Tape<float> tape;
    WorldModelVars<float> wm = bind(tape, agent.world_model, false);
    PolicyVars<float> policy = bind(tape, agent.policy, true);
    CriticVars<float> critic = bind_online(tape, agent.critic, false);
    CriticVars<float> slow = bind_target(tape, agent.critic);
    ImaginationRngs rngs(imagination_seed_ + static_cast<std::uint64_t>(updates_));
    ImaginedTrajectory<float> traj = imagine_rollout(wm, policy, critic, start, config_.imagination, rngs);
    TrajectoryPaths<float> paths = trace_paths(traj);
    std::vector<Var<float>> values, continues;
    for (const auto& s : paths.states) values.push_back(critic_value(slow, s));
    for (const auto& c : paths.continues) continues.push_back(stop_gradient(c));
    std::vector<Var<float>> targets = lambda_returns(paths.rewards, values, continues, gamma, lambda);

    const Eigen::Index rows = targets.front().rows();
    Matrix<float> flat(static_cast<Eigen::Index>(targets.size()) * rows, 1);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      flat.middleRows(static_cast<Eigen::Index>(t) * rows, rows) = targets[t].value();
    }
    normalizer_.update(flat);
    Var<float> loss = actor_loss(targets, paths.entropies, static_cast<float>(config_.eta),
                                 static_cast<float>(normalizer_.scale()));
    tape.backward(loss);
    auto params = agent.policy.parameters();
    auto grads = tape.parameter_grads(params);
    clip_grad_norm(grads, clip);
    adam_step(params, grads, actor_opt_);
    out.actor = loss.value()(0, 0);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      path_h.push_back(paths.states[t].h.value());
      path_z.push_back(paths.states[t].z.value());
      path_targets.push_back(targets[t].value());
    }
  }

  // Critic regression onto the same returns.
  {
    Tape<float> tape;
    CriticVars<float> critic = bind_online(tape, agent.critic, true);
    std::vector<LatentState<float>> states;
    std::vector<Var<float>> targets;
    for (std::size_t t = 0; t < path_h.size(); ++t) {
      states.push_back({tape.constant(path_h[t]), tape.constant(path_z[t])});
      targets.push_back(tape.constant(path_targets[t]));
    }
    Var<float> loss = critic_loss(critic, states, targets);
    tape.backward(loss);
    auto params = agent.critic.parameters();
    auto grads = tape.parameter_grads(params);
    clip_grad_norm(grads, clip);
    adam_step(params, grads, critic_opt_);
    agent.critic.update_target(static_cast<float>(config_.critic_ema));
    out.critic = loss.value()(0, 0);
  }
  ++updates_;
  return out;
}

MetricsRow Trainer::train_iteration() {
  ++iteration_;
  collect(config_.env_steps_per_iteration);

  MetricsRow row;
  row.iteration = iteration_;
  const long n = config_.updates_per_iteration();
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin, dsum = 0.0;
  for (long u = 0; u < n; ++u) {
    const UpdateLosses l = update();
    row.loss_total += l.total;
    row.loss_recon += l.recon;
    row.loss_dynamics += l.dynamics;
    row.loss_representation += l.representation;
    row.loss_reward += l.reward;
    row.loss_continue += l.cont;
    row.loss_ensemble += l.ensemble;
    row.kl += l.kl;
    row.loss_actor += l.actor;
    row.loss_critic += l.critic;
    dsum += l.disagreement;
    dmin = std::min(dmin, l.disagreement);
    dmax = std::max(dmax, l.disagreement);
    disagreement_history_.push_back(l.disagreement);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double* v : {&row.loss_total, &row.loss_recon, &row.loss_dynamics, &row.loss_representation,
                    &row.loss_reward, &row.loss_continue, &row.loss_ensemble, &row.kl, &row.loss_actor,
                    &row.loss_critic}) {
    *v *= inv;
  }
  row.disagreement_mean = dsum * inv;
  row.disagreement_min = dmin;
  row.disagreement_max = dmax;
  const std::size_t window = std::min<std::size_t>(100, disagreement_history_.size());
  double ma = 0.0;
  for (std::size_t i = disagreement_history_.size() - window; i < disagreement_history_.size(); ++i) {
    ma += disagreement_history_[i];
  }
  row.disagreement_ma100 = ma / static_cast<double>(window);

  imagined_steps_ += n * config_.imagined_steps_per_update();
  row.updates = n;
  row.env_steps = env_steps_;
  row.imagined_steps = imagined_steps_;

  const EvalResult eval = evaluate(*agent_, evaluation_seeds(config_.iteration_eval_episodes));
  row.eval_return_mean = eval.mean;
  row.eval_return_std = eval.std;
  return row;
}

EvalResult run_training(const TrainConfig& config, const std::string& dir,
                        const std::function<void(const MetricsRow&)>& on_row, const RunStartHook& on_start) {
  validate(config);
  require(!fs::exists(dir), "output directory already exists: " + dir);
  fs::create_directories(fs::path(dir) / "checkpoints");
  if (on_start) on_start(config, dir);

  std::ofstream metrics(fs::path(dir) / "metrics.csv");
  std::ofstream timing(fs::path(dir) / "timing.csv");
  write_metrics_header(metrics);
  timing << "iteration,seconds\n";

  Trainer trainer(config);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < config.iterations; ++i) {
    const MetricsRow row = trainer.train_iteration();
    write_metrics_row(metrics, row);
    metrics.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing << row.iteration << ',' << fmt(secs) << '\n';
    timing.flush();
    if (row.iteration % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "iter_%04d.pbdr", row.iteration);
      save_agent((fs::path(dir) / "checkpoints" / name).string(), trainer.agent(), config);
    }
    if (on_row) on_row(row);
  }
  save_agent((fs::path(dir) / "final.pbdr").string(), trainer.agent(), config);

  EvalResult result = evaluate(trainer.agent(), evaluation_seeds(config.eval_episodes));
  std::ofstream returns(fs::path(dir) / "eval_returns.csv");
  returns << "episode,seed,return\n";
  for (std::size_t i = 0; i < result.returns.size(); ++i) {
    returns << i << ',' << result.seeds[i] << ',' << fmt(result.returns[i]) << '\n';
  }
  return result;
}

std::vector<ComparisonRow> run_experiment(const std::vector<TrainConfig>& configs,
                                          const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
                                          const std::function<void(const std::string&)>& progress,
                                          const RunStartHook& on_start) {
  for (const auto& c : configs) validate(c);
  std::vector<ComparisonRow> rows;
  for (const auto& base : configs) {
    ComparisonRow row;
    row.model = base.name;
    row.K = base.imagination.particles;
    row.N = base.imagination.branches;
    row.T = base.imagination.horizon;
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base;
      c.seed = seed;
      const std::string dir = (fs::path(out_dir) / (c.name + "_seed" + std::to_string(seed))).string();
      if (progress) progress("training " + c.name + " seed " + std::to_string(seed) + " -> " + dir);
      const EvalResult r = run_training(c, dir, {}, on_start);
      row.seeds.push_back(seed);
      row.seed_means.push_back(r.mean);
      if (progress) progress(c.name + " seed " + std::to_string(seed) + ": mean return " + fmt(r.mean));
    }
    summarize(row.seed_means, row.mean, row.std);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "Model,K,N,T,mean,std\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.K << ',' << r.N << ',' << r.T << ',' << fmt(r.mean) << ',' << fmt(r.std) << '\n';
  }
}

void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows, int seed_count) {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.model.size());
  const std::string perf_note = "(mean +/- std over " + std::to_string(seed_count) + " seeds)";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %3s  %3s  %3s  %s\n", static_cast<int>(name_w), "Model", "K", "N", "T",
                "Performance");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-*s  %3s  %3s  %3s  %s\n", static_cast<int>(name_w), "", "", "", "",
                perf_note.c_str());
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %3d  %3d  %3d  %.2f (+/- %.2f)\n", static_cast<int>(name_w),
                  r.model.c_str(), r.K, r.N, r.T, r.mean, r.std);
    out << buf;
  }
}

}  // namespace pbdr
