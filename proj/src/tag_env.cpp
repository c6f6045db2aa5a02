#include "pbdr/tag_env.hpp"

#include <algorithm>
#include <cmath>

namespace pbdr::tag {

namespace {

Vec2 unit_or_zero(Vec2 v) {
  const double n = v.norm();
  return n > 1e-12 ? v * (1.0 / n) : Vec2{};
}

void integrate(EntityState& body, Vec2 accel, double max_speed, const EnvConfig& config) {
  body.velocity = body.velocity * (1.0 - config.damping) + accel * config.accel_gain;
  body.velocity = clamp_norm(body.velocity, max_speed);
  body.position = body.position + body.velocity;
  if (body.position.x > 1.0 || body.position.x < -1.0) {
    body.position.x = std::clamp(body.position.x, -1.0, 1.0);
    body.velocity.x = 0.0;
  }
  if (body.position.y > 1.0 || body.position.y < -1.0) {
    body.position.y = std::clamp(body.position.y, -1.0, 1.0);
    body.velocity.y = 0.0;
  }
}

}  // namespace

const char* to_string(PredatorMode mode) {
  return mode == PredatorMode::Chase ? "CHASE" : "INTERCEPT";
}

EnvState reset(std::uint64_t seed, const EnvConfig& config) {
  EnvState s;
  s.rng = Rng(seed);
  for (auto& p : s.predators) {
    Vec2 pos;
    do {
      pos = {s.rng.uniform(-1.0, 1.0), s.rng.uniform(-1.0, 1.0)};
    } while (pos.norm() < config.min_spawn_distance);
    p.body.position = pos;
    p.mode = PredatorMode::Chase;
  }
  return s;
}

Observation observe(const EnvState& state) {
  Observation obs{};
  const auto& prey = state.prey;
  obs[0] = prey.velocity.x;
  obs[1] = prey.velocity.y;
  obs[2] = prey.position.x;
  obs[3] = prey.position.y;
  for (int i = 0; i < kNumPredators; ++i) {
    const auto& body = state.predators[i].body;
    obs[4 + 2 * i] = body.position.x - prey.position.x;
    obs[5 + 2 * i] = body.position.y - prey.position.y;
    obs[10 + 2 * i] = body.velocity.x - prey.velocity.x;
    obs[11 + 2 * i] = body.velocity.y - prey.velocity.y;
  }
  return obs;
}

Vec2 predator_action(EnvState& state, int index, const EnvConfig& config) {
  require(index >= 0 && index < kNumPredators, "predator_action: index must be 0, 1 or 2");
  Predator& pred = state.predators[index];
  const Vec2 offset = state.prey.position - pred.body.position;
  if (offset.norm() > config.trigger_radius) {
    pred.mode = PredatorMode::Chase;
  } else if (state.rng.uniform() < config.switch_probability) {
    pred.mode = pred.mode == PredatorMode::Chase ? PredatorMode::Intercept : PredatorMode::Chase;
  }
  Vec2 target = state.prey.position;
  if (pred.mode == PredatorMode::Intercept) target = target + state.prey.velocity * config.lead_steps;
  return unit_or_zero(target - pred.body.position);
}

bool is_done(const EnvState& state, const EnvConfig& config) {
  return state.step_index >= config.episode_length;
}

StepResult step(EnvState& state, Vec2 prey_action, const EnvConfig& config) {
  require(!is_done(state, config), "step: episode already finished");
  prey_action = {std::clamp(prey_action.x, -1.0, 1.0), std::clamp(prey_action.y, -1.0, 1.0)};

  std::array<Vec2, kNumPredators> accel{};
  for (int i = 0; i < kNumPredators; ++i) accel[i] = predator_action(state, i, config);

  integrate(state.prey, prey_action, config.prey_max_speed(), config);
  for (int i = 0; i < kNumPredators; ++i) {
    integrate(state.predators[i].body, accel[i], config.predator_max_speed, config);
  }
  ++state.step_index;

  StepResult result;
  const double contact = config.prey_radius + config.predator_radius;
  for (int i = 0; i < kNumPredators; ++i) {
    const auto& pred = state.predators[i];
    if ((pred.body.position - state.prey.position).norm() < contact) ++result.info.collision_count;
    result.info.predator_modes[i] = pred.mode;
  }
  result.reward = -config.collision_penalty * result.info.collision_count;
  result.done = is_done(state, config);
  result.observation = observe(state);
  return result;
}

Vec2 scripted_prey_baseline(const EnvState& state) {
  int nearest = 0;
  double best = (state.predators[0].body.position - state.prey.position).norm();
  for (int i = 1; i < kNumPredators; ++i) {
    const double d = (state.predators[i].body.position - state.prey.position).norm();
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  Vec2 dir = unit_or_zero(state.prey.position - state.predators[nearest].body.position);
  // Push back toward the centre once the prey is within the outer band.
  constexpr double margin = 0.5;
  auto wall = [&](double x) {
    const double a = std::abs(x);
    return a > margin ? -std::copysign((a - margin) / (1.0 - margin), x) : 0.0;
  };
  dir = dir + Vec2{wall(state.prey.position.x), wall(state.prey.position.y)};
  return unit_or_zero(dir);
}

TrajectoryLog::TrajectoryLog(std::ostream& out) : out_(out) {
  out_ << "step,prey_x,prey_y";
  for (int i = 0; i < kNumPredators; ++i) out_ << ",pred" << i << "_x,pred" << i << "_y,pred" << i << "_mode";
  out_ << ",reward\n";
}

void TrajectoryLog::write(const EnvState& state, double reward) {
  out_ << state.step_index << ',' << state.prey.position.x << ',' << state.prey.position.y;
  for (const auto& p : state.predators) {
    out_ << ',' << p.body.position.x << ',' << p.body.position.y << ',' << to_string(p.mode);
  }
  out_ << ',' << reward << '\n';
}

}  // namespace pbdr::tag
