#include "fsdt/trajectory.hpp"

#include <algorithm>
#include <numeric>

namespace fsdt {

std::vector<double> compute_returns_to_go(const std::vector<double>& rewards) {
  if (rewards.empty()) throw ContractError("returns-to-go of an empty reward list");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

Trajectory make_trajectory(std::uint32_t type_id, Tier tier, std::uint64_t episode, Tensor states,
                           Tensor actions, std::vector<double> rewards) {
  if (states.rank() != 2 || actions.rank() != 2 || states.rows() != rewards.size() ||
      actions.rows() != rewards.size()) {
    throw ShapeError("trajectory: states " + shape_string(states.shape()) + ", actions " +
                     shape_string(actions.shape()) + ", " + std::to_string(rewards.size()) +
                     " rewards");
  }
  Trajectory tr;
  tr.type_id = type_id;
  tr.tier = tier;
  tr.episode = episode;
  tr.states = std::move(states);
  tr.actions = std::move(actions);
  tr.rtg = compute_returns_to_go(rewards);
  tr.rewards = std::move(rewards);
  return tr;
}

std::size_t ContextWindow::real_positions() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

ContextWindow window_from(std::span<const double> rtg, std::span<const double> states,
                          std::span<const double> actions, std::size_t d, std::size_t b,
                          std::size_t t, std::size_t h) {
  if (h == 0) throw ContractError("window: h must be at least 1");
  if (rtg.size() <= t || states.size() < (t + 1) * d || actions.size() < (t + 1) * b) {
    throw ContractError("window: t=" + std::to_string(t) + " beyond the available steps");
  }
  ContextWindow w;
  w.h = h;
  w.d = d;
  w.b = b;
  w.rtg.assign(h, 0.0);
  w.states.assign(h * d, 0.0);
  w.actions.assign(h * b, 0.0);
  w.targets.assign(h * b, 0.0);
  w.timesteps.assign(h, 0);
  w.mask.assign(h, 0);
  const std::size_t real = std::min(h, t + 1);
  const std::size_t first = t + 1 - real;
  for (std::size_t k = 0; k < real; ++k) {
    const std::size_t pos = h - real + k;
    const std::size_t step = first + k;
    w.rtg[pos] = rtg[step];
    std::copy_n(states.begin() + static_cast<std::ptrdiff_t>(step * d), d,
                w.states.begin() + static_cast<std::ptrdiff_t>(pos * d));
    if (step < t) {
      std::copy_n(actions.begin() + static_cast<std::ptrdiff_t>(step * b), b,
                  w.actions.begin() + static_cast<std::ptrdiff_t>(pos * b));
    }
    std::copy_n(actions.begin() + static_cast<std::ptrdiff_t>(step * b), b,
                w.targets.begin() + static_cast<std::ptrdiff_t>(pos * b));
    w.timesteps[pos] = step;
    w.mask[pos] = 1;
  }
  return w;
}

ContextWindow window(const Trajectory& traj, std::size_t t, std::size_t h) {
  if (t >= traj.length()) {
    throw ContractError("window: t=" + std::to_string(t) + " outside trajectory of length " +
                        std::to_string(traj.length()));
  }
  return window_from(traj.rtg, traj.states.data(), traj.actions.data(), traj.state_dim(),
                     traj.action_dim(), t, h);
}

std::array<std::size_t, 4> ClientShard::tier_counts() const {
  std::array<std::size_t, 4> counts{};
  for (const auto& tr : trajectories) ++counts[static_cast<std::size_t>(tr.tier)];
  return counts;
}

std::size_t ClientShard::timesteps() const {
  std::size_t n = 0;
  for (const auto& tr : trajectories) n += tr.length();
  return n;
}

std::vector<ContextWindow> sample_batch(const ClientShard& shard, std::size_t batch_size,
                                        std::size_t h, Rng& rng) {
  if (shard.trajectories.empty()) throw ContractError("sample_batch: empty shard");
  // Prefix offsets so a single integer draw selects a (trajectory, t) pair.
  std::vector<std::size_t> offsets;
  offsets.reserve(shard.trajectories.size());
  std::size_t total = 0;
  for (const auto& tr : shard.trajectories) {
    offsets.push_back(total);
    total += tr.length();
  }
  std::vector<ContextWindow> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t u = rng.uniform_int(total);
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), u);
    const std::size_t k = static_cast<std::size_t>(it - offsets.begin()) - 1;
    batch.push_back(window(shard.trajectories[k], u - offsets[k], h));
  }
  return batch;
}

std::vector<ClientShard> partition_iid(const std::vector<Trajectory>& dataset, std::size_t n_clients,
                                       std::uint64_t seed, std::size_t first_client_id) {
  if (n_clients == 0) throw ContractError("partition: n_clients must be at least 1");
  if (dataset.size() < n_clients) {
    throw ContractError("partition: " + std::to_string(dataset.size()) +
                        " trajectories for " + std::to_string(n_clients) + " clients");
  }
  const std::uint32_t type_id = dataset.front().type_id;
  for (const auto& tr : dataset) {
    if (tr.type_id != type_id) throw ContractError("partition: dataset mixes agent types");
  }
  std::vector<ClientShard> shards(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    shards[c].client_id = first_client_id + c;
    shards[c].type_id = type_id;
  }
  Rng rng(seed);
  std::size_t cursor = 0;
  for (Tier tier : {Tier::Expert, Tier::Medium, Tier::Replay, Tier::Random}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].tier == tier) idx.push_back(i);
    }
    // Fisher-Yates with the project RNG, so the shuffle is platform independent.
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    }
    for (std::size_t i : idx) {
      ClientShard& s = shards[cursor % n_clients];
      s.trajectories.push_back(dataset[i]);
      s.source_index.push_back(i);
      ++cursor;
    }
  }
  return shards;
}

}  // namespace fsdt
