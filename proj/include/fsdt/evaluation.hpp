#ifndef FSDT_EVALUATION_HPP_
#define FSDT_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fsdt/client_model.hpp"
#include "fsdt/dataset.hpp"
#include "fsdt/env.hpp"
#include "fsdt/server_decoder.hpp"

namespace fsdt {

struct EvalConfig {
  double target_return = 0.0;
  std::size_t episodes = 20;
  std::size_t h = 5;
  ActionMode mode = ActionMode::Mean;
  std::uint64_t seed = 0;
};

struct EpisodeTrace {
  double episode_return = 0.0;
  std::vector<double> rtg;      // conditioning value fed at each step, T+1 entries
  std::vector<double> rewards;  // T entries
};

/// Replaces the model's action, for instance with the LQR action. Receives the
/// episode index and the current state.
using ActionOverride = std::function<Eigen::VectorXd(std::size_t, const EnvState&)>;

/// Runs one episode per generator in lockstep. Each step appends
/// (R̂, s, 0) to the context, runs embed → decode → predict on the last h
/// timesteps, acts, lowers R̂ by the reward and writes the executed action into
/// the context. Environment noise and sampled actions draw from each
/// episode's own generator.
std::vector<EpisodeTrace> rollout_episodes(const AgentTypeSpec& spec, const ClientModel& model,
                                           const ServerDecoder& G, const EvalConfig& eval,
                                           std::vector<Rng>& rngs,
                                           const ActionOverride& override_action = {});

/// Single-episode return.
double rollout(const AgentTypeSpec& spec, const ClientModel& model, const ServerDecoder& G,
               const EvalConfig& eval, Rng& rng);

/// 100·(J − J_random)/(J_expert − J_random). Throws ContractError when the
/// endpoints coincide.
double normalized_score(double j, double j_random, double j_expert);

struct ScoreReport {
  std::uint32_t type_id = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized_score = 0.0;
};

/// eval.episodes episodes, episode i seeded with derive_seed(eval.seed, i).
ScoreReport evaluate(const AgentTypeSpec& spec, const Baselines& baselines, const ClientModel& model,
                     const ServerDecoder& G, const EvalConfig& eval);

}  // namespace fsdt

#endif  // FSDT_EVALUATION_HPP_
