#pragma once

#include "mate/envs/env.hpp"

#include <deque>
#include <random>
#include <vector>

namespace mate::rl {

// Whole-episode replay. Capacity counts transitions; the oldest episodes are
// evicted first until a new one fits.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_transitions);

  // UsageError for an empty episode or one longer than the whole capacity.
  void add(envs::EpisodeRecord episode);
  // Uniform over stored episodes, with replacement. Stops early once adding the next
  // episode would exceed `max_transitions` (the first pick is always kept).
  std::vector<envs::EpisodeRecord> sample(std::size_t episodes, std::mt19937_64& rng,
                                          std::size_t max_transitions = 0) const;

  std::size_t capacity() const { return capacity_; }
  std::size_t transitions() const { return stored_; }
  std::size_t episodes() const { return episodes_.size(); }
  std::size_t inserted() const { return inserted_; }
  const envs::EpisodeRecord& episode(std::size_t i) const { return episodes_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t stored_ = 0;
  std::size_t inserted_ = 0;
  std::deque<envs::EpisodeRecord> episodes_;
};

}  // namespace mate::rl
