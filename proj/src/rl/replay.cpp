#include "mate/rl/replay.hpp"

#include "mate/errors.hpp"

namespace mate::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity_transitions) : capacity_(capacity_transitions) {
  if (capacity_ == 0) throw ConfigError("train.buffer_size must be positive");
}

void ReplayBuffer::add(envs::EpisodeRecord episode) {
  const std::size_t len = episode.length();
  if (len == 0) throw UsageError("replay: cannot store an empty episode");
  if (len > capacity_) {
    throw UsageError("replay: episode of " + std::to_string(len) + " transitions exceeds capacity " +
                     std::to_string(capacity_));
  }
  while (stored_ + len > capacity_) {
    stored_ -= episodes_.front().length();
    episodes_.pop_front();
  }
  stored_ += len;
  ++inserted_;
  episodes_.push_back(std::move(episode));
}

std::vector<envs::EpisodeRecord> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng,
                                                      std::size_t max_transitions) const {
  if (episodes_.empty()) throw UsageError("replay: sampling from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, episodes_.size() - 1);
  std::vector<envs::EpisodeRecord> out;
  std::size_t total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& ep = episodes_[pick(rng)];
    if (max_transitions && !out.empty() && total + ep.length() > max_transitions) break;
    total += ep.length();
    out.push_back(ep);
  }
  return out;
}

}  // namespace mate::rl
