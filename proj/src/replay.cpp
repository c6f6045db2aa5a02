#include "pbdr/replay.hpp"

#include <numeric>

namespace pbdr {

double Episode::total_reward() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

ReplayBuffer::ReplayBuffer(long capacity_steps) : capacity_(capacity_steps) {
  require(capacity_steps >= 1, "ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Episode episode) {
  require(episode.observations.size() >= 2, "ReplayBuffer: episode has no transitions");
  require(episode.actions.size() == episode.observations.size() &&
              episode.rewards.size() == episode.observations.size() &&
              episode.continues.size() == episode.observations.size(),
          "ReplayBuffer: ragged episode");
  size_steps_ += episode.steps();
  episodes_.push_back(std::move(episode));
  while (size_steps_ > capacity_ && episodes_.size() > 1) {
    size_steps_ -= episodes_.front().steps();
    episodes_.pop_front();
  }
}

SequenceBatch<float> ReplayBuffer::sample(int batch, int length, Rng& rng) const {
  require(batch >= 1 && length >= 1, "ReplayBuffer::sample: batch and length must be positive");
  std::vector<long> windows;
  long total = 0;
  for (const auto& ep : episodes_) {
    const long w = std::max(0L, static_cast<long>(ep.observations.size()) - length + 1);
    windows.push_back(w);
    total += w;
  }
  require(total > 0, "ReplayBuffer::sample: no episode is long enough");

  SequenceBatch<float> out;
  for (int t = 0; t < length; ++t) {
    out.observations.emplace_back(batch, tag::kObservationDim);
    out.actions.emplace_back(batch, tag::kActionDim);
    out.rewards.emplace_back(batch, 1);
    out.continues.emplace_back(batch, 1);
  }
  for (int b = 0; b < batch; ++b) {
    long pick = static_cast<long>(rng.next_u64() % static_cast<std::uint64_t>(total));
    std::size_t e = 0;
    while (pick >= windows[e]) pick -= windows[e++];
    const Episode& ep = episodes_[e];
    for (int t = 0; t < length; ++t) {
      const auto i = static_cast<std::size_t>(pick + t);
      for (int d = 0; d < tag::kObservationDim; ++d) out.observations[t](b, d) = ep.observations[i][d];
      for (int d = 0; d < tag::kActionDim; ++d) out.actions[t](b, d) = ep.actions[i][d];
      out.rewards[t](b, 0) = ep.rewards[i];
      out.continues[t](b, 0) = ep.continues[i];
    }
  }
  return out;
}

}  // namespace pbdr
