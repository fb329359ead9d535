#include "fsdt/evaluation.hpp"

#include <cmath>

namespace fsdt {

std::vector<EpisodeTrace> rollout_episodes(const AgentTypeSpec& spec, const ClientModel& model,
                                           const ServerDecoder& G, const EvalConfig& eval,
                                           std::vector<Rng>& rngs,
                                           const ActionOverride& override_action) {
  if (model.E.state_dim() != spec.d || model.E.action_dim() != spec.b) {
    throw ShapeError("rollout: model dimensions do not match agent type " +
                     std::to_string(spec.type_id));
  }
  if (eval.h == 0) throw ContractError("rollout: h must be at least 1");
  const std::size_t n = rngs.size();
  const std::size_t T = spec.horizon;
  const std::size_t d = spec.d;
  const std::size_t b = spec.b;

  struct Buffer {
    EnvState state;
    std::vector<double> rtg, states, actions;
  };
  std::vector<Buffer> buf(n);
  std::vector<EpisodeTrace> traces(n);
  for (std::size_t i = 0; i < n; ++i) {
    buf[i].state = reset(spec, rngs[i]);
    buf[i].rtg.push_back(eval.target_return);
    traces[i].rtg.push_back(eval.target_return);
  }

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<ContextWindow> windows;
    windows.reserve(n);
    for (auto& bf : buf) {
      for (std::size_t k = 0; k < d; ++k) bf.states.push_back(bf.state.s[static_cast<Eigen::Index>(k)]);
      bf.actions.resize((t + 1) * b, 0.0);
      windows.push_back(window_from(bf.rtg, bf.states, bf.actions, d, b, t, eval.h));
    }
    Tensor out;
    if (!override_action) {
      Graph g;
      std::vector<std::uint8_t> mask;
      const Var tokens = embed(g, model.E, windows, &mask);
      out = g.value(decode(g, G, tokens, mask, 3 * eval.h));
    }
    for (std::size_t i = 0; i < n; ++i) {
      Buffer& bf = buf[i];
      Eigen::VectorXd a;
      if (override_action) {
        a = clamp_action(override_action(i, bf.state), spec.action_bound);
      } else {
        // State-slot token of the newest position.
        const std::size_t row = i * 3 * eval.h + 3 * (eval.h - 1) + 1;
        a = eval_action(model.P, out.row(row), eval.mode, spec.action_bound, rngs[i]);
      }
      StepResult r = step(spec, bf.state, a, rngs[i]);
      for (std::size_t k = 0; k < b; ++k) bf.actions[t * b + k] = a[static_cast<Eigen::Index>(k)];
      traces[i].rewards.push_back(r.reward);
      traces[i].episode_return += r.reward;
      const double next = bf.rtg.back() - r.reward;
      bf.rtg.push_back(next);
      traces[i].rtg.push_back(next);
      bf.state = std::move(r.state);
    }
  }
  return traces;
}

double rollout(const AgentTypeSpec& spec, const ClientModel& model, const ServerDecoder& G,
               const EvalConfig& eval, Rng& rng) {
  std::vector<Rng> rngs{rng};
  const double ret = rollout_episodes(spec, model, G, eval, rngs).front().episode_return;
  rng = rngs.front();
  return ret;
}

double normalized_score(double j, double j_random, double j_expert) {
  if (j_expert == j_random) throw ContractError("normalized_score: degenerate baselines");
  return 100.0 * (j - j_random) / (j_expert - j_random);
}

ScoreReport evaluate(const AgentTypeSpec& spec, const Baselines& baselines, const ClientModel& model,
                     const ServerDecoder& G, const EvalConfig& eval) {
  if (eval.episodes == 0) throw ContractError("evaluate: episodes must be at least 1");
  if (!std::isfinite(eval.target_return)) throw ContractError("evaluate: target return not finite");
  std::vector<Rng> rngs;
  rngs.reserve(eval.episodes);
  for (std::size_t i = 0; i < eval.episodes; ++i) rngs.emplace_back(derive_seed(eval.seed, i));
  const auto traces = rollout_episodes(spec, model, G, eval, rngs);
  ScoreReport rep;
  rep.type_id = spec.type_id;
  for (const auto& tr : traces) rep.mean_return += tr.episode_return;
  rep.mean_return /= static_cast<double>(traces.size());
  for (const auto& tr : traces) {
    rep.std_return += (tr.episode_return - rep.mean_return) * (tr.episode_return - rep.mean_return);
  }
  rep.std_return = std::sqrt(rep.std_return / static_cast<double>(traces.size()));
  rep.normalized_score = normalized_score(rep.mean_return, baselines.j_random, baselines.j_expert);
  return rep;
}

}  // namespace fsdt
