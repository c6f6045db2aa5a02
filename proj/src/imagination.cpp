#include "pbdr/imagination.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pbdr {

const char* to_string(PruneMode mode) { return mode == PruneMode::TopK ? "topk" : "soft_resample"; }

PruneMode parse_prune_mode(const std::string& text) {
  if (text == "topk") return PruneMode::TopK;
  if (text == "soft_resample") return PruneMode::SoftResample;
  throw UsageError("unknown prune mode '" + text + "' (expected topk or soft_resample)");
}

void ImaginationConfig::validate() const {
  require(particles >= 1, "K (particles) must be at least 1");
  require(branches >= 1, "N (branches) must be at least 1");
  require(horizon >= 1, "T (horizon) must be at least 1");
  require(beta >= 0.0, "beta must be non-negative");
  require(temperature > 0.0, "temperature must be positive");
}

std::vector<int> systematic_resample(std::span<const double> weights, int count, Rng& rng) {
  require(count >= 1, "systematic_resample: count must be at least 1");
  require(!weights.empty(), "systematic_resample: no weights");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "systematic_resample: weights must be finite and non-negative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-6, "systematic_resample: weights must sum to 1");

  const double step = 1.0 / static_cast<double>(count);
  const double offset = rng.uniform() * step;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  std::size_t i = 0;
  double cumulative = weights[0];
  for (int j = 0; j < count; ++j) {
    const double target = offset + static_cast<double>(j) * step;
    while (cumulative <= target && i + 1 < weights.size()) cumulative += weights[++i];
    out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> prune(std::span<const double> scores, int keep, PruneMode mode, Rng& rng, double temperature) {
  require(keep >= 1, "prune: must keep at least one branch");
  require(static_cast<std::size_t>(keep) <= scores.size(), "prune: fewer branches than survivors requested");
  const int total = static_cast<int>(scores.size());
  if (keep == total) {
    std::vector<int> all(scores.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (mode == PruneMode::TopK) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    order.resize(static_cast<std::size_t>(keep));
    std::sort(order.begin(), order.end());
    return order;
  }
  require(temperature > 0.0, "prune: temperature must be positive");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> weights(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    weights[i] = std::exp((scores[i] - top) / temperature);
    z += weights[i];
  }
  for (double& w : weights) w /= z;
  return systematic_resample(weights, keep, rng);
}

std::vector<int> prune_groups(std::span<const double> scores, int group_size, int keep, PruneMode mode, Rng& rng,
                              double temperature) {
  require(group_size >= 1 && scores.size() % static_cast<std::size_t>(group_size) == 0,
          "prune_groups: branch count is not a multiple of the group size");
  std::vector<int> out;
  for (std::size_t g = 0; g < scores.size(); g += static_cast<std::size_t>(group_size)) {
    for (int local : prune(scores.subspan(g, static_cast<std::size_t>(group_size)), keep, mode, rng, temperature)) {
      out.push_back(static_cast<int>(g) + local);
    }
  }
  return out;
}

void write_dream_log(std::ostream& out, const std::vector<DreamStepLog>& log) {
  out << "step,branch,parent,predicted_reward,value,disagreement,score,survived\n";
  for (std::size_t t = 0; t < log.size(); ++t) {
    const auto& step = log[t];
    std::vector<char> survived(step.branches.size(), 0);
    for (int s : step.survivors) survived[static_cast<std::size_t>(s)] = 1;
    for (std::size_t b = 0; b < step.branches.size(); ++b) {
      const Branch& br = step.branches[b];
      out << t << ',' << b << ',' << br.parent << ',' << br.predicted_reward << ',' << br.value << ','
          << br.disagreement << ',' << br.score << ',' << int(survived[b]) << '\n';
    }
  }
}

}  // namespace pbdr
