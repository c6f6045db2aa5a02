#include "pbdr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pbdr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& text) {
  Int value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key, "expected an integer, got '" + text + "'");
  return value;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define PBDR_INT_FIELD(KEY, MEMBER, TYPE)                                                                  \
  Field {                                                                                                  \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_integer<TYPE>(KEY, v); },            \
        [](const TrainConfig& c) { return std::to_string(c.MEMBER); }                                      \
  }
#define PBDR_REAL_FIELD(KEY, MEMBER)                                                                       \
  Field {                                                                                                  \
    KEY, [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); },                     \
        [](const TrainConfig& c) { return format_double(c.MEMBER); }                                       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"name", [](TrainConfig& c, const std::string& v) { c.name = v; },
            [](const TrainConfig& c) { return c.name; }},
      PBDR_INT_FIELD("K", imagination.particles, int),
      PBDR_INT_FIELD("N", imagination.branches, int),
      PBDR_INT_FIELD("T", imagination.horizon, int),
      PBDR_REAL_FIELD("beta", imagination.beta),
      Field{"prune_mode",
            [](TrainConfig& c, const std::string& v) {
              try {
                c.imagination.prune = parse_prune_mode(v);
              } catch (const UsageError& e) {
                throw ConfigError("prune_mode", e.what());
              }
            },
            [](const TrainConfig& c) { return std::string(to_string(c.imagination.prune)); }},
      PBDR_REAL_FIELD("temperature", imagination.temperature),
      Field{"random_prior_member",
            [](TrainConfig& c, const std::string& v) {
              c.imagination.random_prior_member = parse_bool("random_prior_member", v);
            },
            [](const TrainConfig& c) { return std::string(c.imagination.random_prior_member ? "true" : "false"); }},
      PBDR_REAL_FIELD("lr_world", lr_world),
      PBDR_REAL_FIELD("lr_actor", lr_actor),
      PBDR_REAL_FIELD("lr_critic", lr_critic),
      PBDR_REAL_FIELD("gamma", gamma),
      PBDR_REAL_FIELD("lambda", lambda),
      PBDR_REAL_FIELD("eta", eta),
      PBDR_REAL_FIELD("critic_ema", critic_ema),
      PBDR_REAL_FIELD("grad_clip", grad_clip),
      PBDR_INT_FIELD("ensemble", dims.ensemble, int),
      PBDR_INT_FIELD("deter", dims.deter, Eigen::Index),
      PBDR_INT_FIELD("stoch", dims.stoch, Eigen::Index),
      PBDR_INT_FIELD("embed", dims.embed, Eigen::Index),
      PBDR_INT_FIELD("units", dims.units, Eigen::Index),
      PBDR_REAL_FIELD("free_bits", loss.free_bits),
      PBDR_REAL_FIELD("beta_dyn", loss.beta_dyn),
      PBDR_REAL_FIELD("beta_rep", loss.beta_rep),
      PBDR_INT_FIELD("batch", batch, int),
      PBDR_INT_FIELD("seq_len", seq_len, int),
      PBDR_INT_FIELD("buffer_capacity", buffer_capacity, long),
      PBDR_INT_FIELD("iterations", iterations, int),
      PBDR_INT_FIELD("env_steps", env_steps_per_iteration, long),
      PBDR_INT_FIELD("imagined_steps", imagined_steps_per_iteration, long),
      PBDR_INT_FIELD("warmup_episodes", warmup_episodes, int),
      PBDR_INT_FIELD("eval_episodes", eval_episodes, int),
      PBDR_INT_FIELD("iteration_eval_episodes", iteration_eval_episodes, int),
      PBDR_INT_FIELD("checkpoint_every", checkpoint_every, int),
      PBDR_INT_FIELD("seed", seed, std::uint64_t),
  };
  return table;
}

#undef PBDR_INT_FIELD
#undef PBDR_REAL_FIELD

void check(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, std::string(field) + " " + message);
}

}  // namespace

void validate(const TrainConfig& c) {
  check(!c.name.empty() && c.name.find_first_of(" \t,") == std::string::npos, "name",
        "must be non-empty without spaces or commas");
  check(c.imagination.particles >= 1, "K", "must be >= 1");
  check(c.imagination.branches >= 1, "N", "must be >= 1");
  check(c.imagination.horizon >= 1, "T", "must be >= 1");
  check(c.imagination.beta >= 0.0, "beta", "must be >= 0");
  check(c.imagination.temperature > 0.0, "temperature", "must be > 0");
  check(c.lr_world > 0.0, "lr_world", "must be > 0");
  check(c.lr_actor > 0.0, "lr_actor", "must be > 0");
  check(c.lr_critic > 0.0, "lr_critic", "must be > 0");
  check(c.gamma > 0.0 && c.gamma <= 1.0, "gamma", "must lie in (0, 1]");
  check(c.lambda >= 0.0 && c.lambda <= 1.0, "lambda", "must lie in [0, 1]");
  check(c.eta >= 0.0, "eta", "must be >= 0");
  check(c.critic_ema > 0.0 && c.critic_ema <= 1.0, "critic_ema", "must lie in (0, 1]");
  check(c.grad_clip >= 0.0, "grad_clip", "must be >= 0 (0 disables clipping)");
  check(c.dims.ensemble >= 1, "ensemble", "must be >= 1");
  check(c.dims.ensemble >= 2 || c.imagination.beta == 0.0, "ensemble",
        "must be >= 2 when beta > 0 (disagreement needs two heads)");
  check(c.dims.deter >= 1, "deter", "must be >= 1");
  check(c.dims.stoch >= 1, "stoch", "must be >= 1");
  check(c.dims.embed >= 1, "embed", "must be >= 1");
  check(c.dims.units >= 1, "units", "must be >= 1");
  check(c.loss.free_bits >= 0.0, "free_bits", "must be >= 0");
  check(c.loss.beta_dyn >= 0.0, "beta_dyn", "must be >= 0");
  check(c.loss.beta_rep >= 0.0, "beta_rep", "must be >= 0");
  check(c.batch >= 1, "batch", "must be >= 1");
  check(c.seq_len >= 2, "seq_len", "must be >= 2");
  check(c.buffer_capacity >= 1, "buffer_capacity", "must be >= 1");
  check(c.iterations >= 1, "iterations", "must be >= 1");
  check(c.env_steps_per_iteration >= 1, "env_steps", "must be >= 1");
  check(c.imagined_steps_per_iteration >= 1, "imagined_steps", "must be >= 1");
  check(c.warmup_episodes >= 1, "warmup_episodes", "must be >= 1");
  check(c.eval_episodes >= 1, "eval_episodes", "must be >= 1");
  check(c.iteration_eval_episodes >= 1, "iteration_eval_episodes", "must be >= 1");
  check(c.checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
}

TrainConfig parse_config(const std::string& text, const std::string& source) {
  TrainConfig config;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  auto fail = [&](int line, const std::string& field, const std::string& msg) {
    throw ConfigError(field, source + ":" + std::to_string(line) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "", "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (key == f.key) field = &f;
    }
    if (field == nullptr) fail(line_no, key, "unknown key '" + key + "'");
    if (seen.count(key) != 0) fail(line_no, key, "duplicate key '" + key + "'");
    if (value.empty()) fail(line_no, key, "field '" + key + "' has no value");
    seen[key] = line_no;
    try {
      field->set(config, value);
    } catch (const ConfigError& e) {
      fail(line_no, key, "field '" + key + "': " + e.what());
    }
  }
  try {
    validate(config);
  } catch (const ConfigError& e) {
    const auto it = seen.find(e.field());
    const int line = it == seen.end() ? 0 : it->second;
    const std::string where = line > 0 ? source + ":" + std::to_string(line) : source;
    throw ConfigError(e.field(), where + ": field '" + e.field() + "': " + e.what());
  }
  return config;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::string to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace pbdr
