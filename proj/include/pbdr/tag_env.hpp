#pragma once

// Seeded predator-prey arena. One prey (the learner) evades three scripted
// predators. Inside the trigger radius each predator flips between pursuing
// the prey's current position (CHASE) and its extrapolated position
// (INTERCEPT); the mode is never part of the observation.

#include "pbdr/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>

namespace pbdr::tag {

inline constexpr int kNumPredators = 3;
inline constexpr int kObservationDim = 16;
inline constexpr int kActionDim = 2;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
  friend Vec2 operator*(double s, Vec2 a) { return {a.x * s, a.y * s}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;

  double norm() const { return std::hypot(x, y); }
};

/// Scales `v` down to length `limit` if it is longer.
inline Vec2 clamp_norm(Vec2 v, double limit) {
  const double n = v.norm();
  return n > limit ? v * (limit / n) : v;
}

enum class PredatorMode { Chase, Intercept };

const char* to_string(PredatorMode mode);

struct EntityState {
  Vec2 position;
  Vec2 velocity;
  friend bool operator==(const EntityState&, const EntityState&) = default;
};

struct Predator {
  EntityState body;
  PredatorMode mode = PredatorMode::Chase;
  friend bool operator==(const Predator&, const Predator&) = default;
};

struct EnvConfig {
  int episode_length = 100;
  double collision_penalty = 1.0;
  double trigger_radius = 0.5;
  double switch_probability = 0.1;
  double lead_steps = 5.0;
  double predator_max_speed = 0.1;
  double prey_speed_ratio = 1.3;
  double damping = 0.25;
  double accel_gain = 0.15;
  double prey_radius = 0.05;
  double predator_radius = 0.075;
  double min_spawn_distance = 0.5;

  double prey_max_speed() const { return predator_max_speed * prey_speed_ratio; }
};

struct EnvState {
  EntityState prey;
  std::array<Predator, kNumPredators> predators;
  int step_index = 0;
  Rng rng;
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

using Observation = std::array<double, kObservationDim>;

struct StepInfo {
  int collision_count = 0;
  std::array<PredatorMode, kNumPredators> predator_modes{};
};

struct StepResult {
  Observation observation{};
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Prey at the origin at rest, predators uniformly placed at least
/// `min_spawn_distance` away, every mode CHASE.
EnvState reset(std::uint64_t seed, const EnvConfig& config = {});

/// Layout: prey velocity, prey position, predator positions relative to the
/// prey (3 x 2), predator velocities relative to the prey (3 x 2).
Observation observe(const EnvState& state);

/// Advances predator `index`'s mode and returns its unit-clamped acceleration.
Vec2 predator_action(EnvState& state, int index, const EnvConfig& config = {});

/// Steps the arena in place. Throws UsageError once the episode is over.
StepResult step(EnvState& state, Vec2 prey_action, const EnvConfig& config = {});

/// Flee away from the nearest predator (lowest index on ties), bent back
/// toward the centre when within 0.5 of a wall.
Vec2 scripted_prey_baseline(const EnvState& state);

bool is_done(const EnvState& state, const EnvConfig& config = {});

/// Per-step trajectory CSV: step, prey_x, prey_y, pred{i}_x, pred{i}_y,
/// pred{i}_mode, reward.
class TrajectoryLog {
 public:
  explicit TrajectoryLog(std::ostream& out);
  void write(const EnvState& state, double reward);

 private:
  std::ostream& out_;
};

}  // namespace pbdr::tag
