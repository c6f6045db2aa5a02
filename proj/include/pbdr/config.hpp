#pragma once

// Flat `key = value` training configuration. Blank lines and `#` comments are
// ignored; unknown keys, duplicate keys and out-of-range values are rejected
// with the offending line and field. configs/schema.txt documents every key.

#include "pbdr/imagination.hpp"
#include "pbdr/world_model.hpp"

#include <cstdint>
#include <utility>
#include <vector>
#include <stdexcept>
#include <string>

namespace pbdr {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct TrainConfig {
  std::string name = "BaseDreamer";
  ImaginationConfig imagination{1, 1, 16, 0.1, PruneMode::TopK, 1.0, false};
  ModelDims dims;
  WorldModelLossConfig loss;

  double lr_world = 3e-4;
  double lr_actor = 8e-5;
  double lr_critic = 8e-5;
  double gamma = 0.985;
  double lambda = 0.95;
  double eta = 3e-4;
  double critic_ema = 0.02;
  double grad_clip = 100.0;

  int batch = 16;
  int seq_len = 16;
  long buffer_capacity = 100000;

  int iterations = 50;
  long env_steps_per_iteration = 1000;
  long imagined_steps_per_iteration = 20000;
  int warmup_episodes = 5;
  int eval_episodes = 100;
  int iteration_eval_episodes = 10;
  int checkpoint_every = 10;

  std::uint64_t seed = 0;

  /// Imagined state-transitions per update: B * K * T.
  long imagined_steps_per_update() const {
    return static_cast<long>(batch) * imagination.particles * imagination.horizon;
  }
  /// ceil(imagined_steps_per_iteration / imagined_steps_per_update()).
  long updates_per_iteration() const {
    const long per = imagined_steps_per_update();
    return (imagined_steps_per_iteration + per - 1) / per;
  }
};

/// Parses and validates. `source` prefixes diagnostics (usually the path).
TrainConfig parse_config(const std::string& text, const std::string& source = "<config>");
TrainConfig load_config(const std::string& path);

/// Throws ConfigError naming the first invalid field.
void validate(const TrainConfig& config);

/// Canonical key/value form, in schema order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
std::string to_text(const TrainConfig& config);

}  // namespace pbdr
