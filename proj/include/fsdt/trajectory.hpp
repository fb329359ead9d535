#ifndef FSDT_TRAJECTORY_HPP_
#define FSDT_TRAJECTORY_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fsdt/env.hpp"
#include "fsdt/random.hpp"
#include "fsdt/tensor.hpp"

namespace fsdt {

/// Suffix sums: out[t] = Σ_{t' ≥ t} rewards[t'].
std::vector<double> compute_returns_to_go(const std::vector<double>& rewards);

struct Trajectory {
  std::uint32_t type_id = 0;
  Tier tier = Tier::Expert;
  std::uint64_t episode = 0;  // index within its generated tier file
  Tensor states;              // T×d
  Tensor actions;             // T×b, as executed (clamped)
  std::vector<double> rewards;
  std::vector<double> rtg;

  std::size_t length() const { return rewards.size(); }
  std::size_t state_dim() const { return states.cols(); }
  std::size_t action_dim() const { return actions.cols(); }
};

/// Builds a trajectory, computing its returns-to-go and checking that all
/// arrays share one length.
Trajectory make_trajectory(std::uint32_t type_id, Tier tier, std::uint64_t episode, Tensor states,
                           Tensor actions, std::vector<double> rewards);

/// h consecutive timesteps ending at the prediction step, left-padded with
/// zeros. Position h-1 is always the current step; its input action is zero
/// and its executed action sits in `targets`.
struct ContextWindow {
  std::size_t h = 0;
  std::size_t d = 0;
  std::size_t b = 0;
  std::vector<double> rtg;         // h
  std::vector<double> states;      // h×d
  std::vector<double> actions;     // h×b, model input
  std::vector<double> targets;     // h×b, action to predict at each position
  std::vector<std::size_t> timesteps;  // h, 0 on padding
  std::vector<std::uint8_t> mask;      // h, 1 = real

  std::size_t real_positions() const;
  /// Scalars carried by real positions: (d + b + 1) per real position.
  std::size_t content_size() const { return real_positions() * (d + b + 1); }
};

/// Window over timesteps max(0, t-h+1)..t of `traj`.
ContextWindow window(const Trajectory& traj, std::size_t t, std::size_t h);

/// Window over the first t+1 rows of raw per-step arrays (row-major, at least
/// t+1 rows each). Actions at position t are treated as unknown.
ContextWindow window_from(std::span<const double> rtg, std::span<const double> states,
                          std::span<const double> actions, std::size_t d, std::size_t b,
                          std::size_t t, std::size_t h);

struct ClientShard {
  std::size_t client_id = 0;
  std::uint32_t type_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<std::size_t> source_index;  // positions in the partitioned dataset

  std::array<std::size_t, 4> tier_counts() const;
  std::size_t timesteps() const;
};

/// batch_size windows, each a uniform draw over all (trajectory, timestep)
/// pairs of the shard.
std::vector<ContextWindow> sample_batch(const ClientShard& shard, std::size_t batch_size,
                                        std::size_t h, Rng& rng);

/// Shuffles each tier separately and deals its episodes round-robin, with the
/// dealing cursor carried across tiers. Shard sizes then differ by at most
/// one, and so does every per-tier count.
std::vector<ClientShard> partition_iid(const std::vector<Trajectory>& dataset, std::size_t n_clients,
                                       std::uint64_t seed, std::size_t first_client_id = 0);

}  // namespace fsdt

#endif  // FSDT_TRAJECTORY_HPP_
