#pragma once

#include "pbdr/tag_env.hpp"
#include "pbdr/world_model.hpp"

#include <array>
#include <deque>
#include <vector>

namespace pbdr {

/// One complete episode. Entry t pairs observation t with the action that led
/// to it, the reward received on arrival and whether the episode continues.
/// Entry 0 is the reset observation with a zero action and zero reward.
struct Episode {
  std::vector<std::array<float, tag::kObservationDim>> observations;
  std::vector<std::array<float, tag::kActionDim>> actions;
  std::vector<float> rewards;
  std::vector<float> continues;

  /// Environment transitions contained (entries - 1).
  long steps() const { return static_cast<long>(observations.size()) - 1; }
  double total_reward() const;
  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Ring of whole episodes bounded by a transition count. Sampled windows
/// never cross an episode boundary.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(long capacity_steps = 100000);

  /// Appends, then evicts the oldest whole episodes while over capacity.
  void add(Episode episode);

  /// B windows of L consecutive entries, uniform over every valid window.
  SequenceBatch<float> sample(int batch, int length, Rng& rng) const;

  long size_steps() const { return size_steps_; }
  long capacity_steps() const { return capacity_; }
  std::size_t episode_count() const { return episodes_.size(); }
  const std::deque<Episode>& episodes() const { return episodes_; }

 private:
  long capacity_;
  long size_steps_ = 0;
  std::deque<Episode> episodes_;
};

}  // namespace pbdr
