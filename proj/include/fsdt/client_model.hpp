#ifndef FSDT_CLIENT_MODEL_HPP_
#define FSDT_CLIENT_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "fsdt/autograd.hpp"
#include "fsdt/random.hpp"
#include "fsdt/trajectory.hpp"

namespace fsdt {

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 2.0;

/// Fills `p` uniformly in ±1/√fan_in from its own seeded stream.
void init_uniform(Parameter& p, std::size_t fan_in, std::uint64_t seed);

/// E: per-slot affine maps into width D plus a learned table over absolute
/// timesteps. Returns-to-go are divided by `rtg_scale` before φ_r.
struct EmbeddingModel {
  Parameter w_r, b_r;  // 1×D, D
  Parameter w_s, b_s;  // d×D, D
  Parameter w_a, b_a;  // b×D, D
  Parameter omega;     // max_T×D
  double rtg_scale = 1.0;

  std::size_t width() const { return b_r.value.size(); }
  std::size_t state_dim() const { return w_s.value.rows(); }
  std::size_t action_dim() const { return w_a.value.rows(); }
  std::size_t max_timestep() const { return omega.value.rows(); }
};

/// P: mean and log-σ heads on the state-slot output token.
struct PredictionModel {
  Parameter w_mu, b_mu;  // D×b, b
  Parameter w_ls, b_ls;  // D×b, b
};

struct ClientModel {
  std::uint32_t type_id = 0;
  EmbeddingModel E;
  PredictionModel P;

  /// Fixed order: E tensors then P tensors.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t embedding_parameter_count() const;
  std::size_t prediction_parameter_count() const;
  void set_frozen(bool frozen);
  /// FNV-1a over every parameter's bytes, in parameter order.
  std::uint64_t hash() const;
};

ClientModel make_client_model(std::uint32_t type_id, std::size_t d, std::size_t b, std::size_t width,
                              std::size_t max_timestep, double rtg_scale, std::uint64_t seed);

/// Tokens of a batch of windows on graph `g`, shape (n·3h)×D, ordered per
/// timestep as (R̂, s, a). Padded positions are zero rows. Appends the token
/// mask to `mask` when non-null.
Var embed(Graph& g, const EmbeddingModel& E, const std::vector<ContextWindow>& windows,
          std::vector<std::uint8_t>* mask = nullptr);

struct TokenSequence {
  Tensor tokens;  // L×D
  std::vector<std::uint8_t> mask;
};

TokenSequence embed(const EmbeddingModel& E, const ContextWindow& w);

/// Row indices of the state-slot tokens at real positions.
std::vector<std::size_t> state_token_rows(const std::vector<ContextWindow>& windows);
/// Executed actions at real positions, stacked in state_token_rows order.
Tensor real_targets(const std::vector<ContextWindow>& windows);

struct HeadOutput {
  Var mu;
  Var log_sigma;  // unclamped
};

/// Heads applied to rows of `v` (already gathered state tokens).
HeadOutput predict(Graph& g, const PredictionModel& P, Var v);

/// Mean Gaussian NLL over every real position of the batch. `tokens` are the
/// decoder outputs, (n·3h)×D.
Var action_loss(Graph& g, const PredictionModel& P, Var tokens,
                const std::vector<ContextWindow>& windows);

struct GaussianAction {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
};

GaussianAction predict(const PredictionModel& P, std::span<const double> v_s);

/// Σ_i log σ_i + (a_i − μ_i)² / (2σ_i²) + ½ log 2π. Throws ContractError on
/// σ_i ≤ 0.
double action_nll(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma,
                  const Eigen::VectorXd& a);

enum class ActionMode { Mean, Sample };

Eigen::VectorXd eval_action(const PredictionModel& P, std::span<const double> v_s, ActionMode mode,
                            double bound, Rng& rng);

}  // namespace fsdt

#endif  // FSDT_CLIENT_MODEL_HPP_
