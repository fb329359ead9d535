#ifndef FSDT_ENV_HPP_
#define FSDT_ENV_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "fsdt/random.hpp"

namespace fsdt {

/// Behaviour tiers. Random is only used for baselines.
enum class Tier : std::uint8_t { Expert = 0, Medium = 1, Replay = 2, Random = 3 };

std::string_view tier_name(Tier tier);
Tier parse_tier(std::string_view name);

/// One agent category: a noisy linear system with quadratic cost.
struct AgentTypeSpec {
  std::uint32_t type_id = 0;
  std::size_t d = 1;
  std::size_t b = 1;
  Eigen::MatrixXd A;  // d×d
  Eigen::MatrixXd B;  // d×b
  Eigen::MatrixXd Q;  // d×d, SPD
  Eigen::MatrixXd R;  // b×b, SPD
  double noise_std = 0.05;
  std::size_t horizon = 50;
  double action_bound = 3.0;
};

struct LqrSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;  // b×d, a = -K s
  int iterations = 0;
};

/// Checks shapes, symmetry and definiteness of the cost matrices, and that the
/// LQR closed loop is stable. Throws ContractError on the first violation.
void validate(const AgentTypeSpec& spec);

/// One application of the discrete Riccati map to P.
Eigen::MatrixXd riccati_map(const AgentTypeSpec& spec, const Eigen::MatrixXd& P);

/// Fixed-point iteration from P = Q until the max-abs change drops below
/// 1e-10. Throws ContractError after 10,000 iterations.
LqrSolution solve_lqr(const AgentTypeSpec& spec);

double spectral_radius(const Eigen::MatrixXd& m);

struct EnvState {
  Eigen::VectorXd s;
  std::size_t t = 0;
};

/// s0 ~ N(0, I), scaled back onto the unit sphere when it lands outside.
EnvState reset(const AgentTypeSpec& spec, Rng& rng);

Eigen::VectorXd clamp_action(const Eigen::VectorXd& a, double bound);

struct StepResult {
  EnvState state;
  double reward = 0.0;
};

/// s' = A s + B clamp(a) + noise, r = -(sᵀQs + aᵀRa) on the clamped action.
/// Draws d normals from `rng` even when noise_std is zero.
StepResult step(const AgentTypeSpec& spec, const EnvState& state, const Eigen::VectorXd& a,
                Rng& rng);

/// Behaviour policy of a tier, clamped to ±bound. Medium adds N(0, (bound/2)²)
/// noise to the LQR action; Replay takes the Medium action or a uniform one
/// with equal probability.
Eigen::VectorXd scripted_action(Tier tier, const Eigen::MatrixXd& K, const Eigen::VectorXd& s,
                                double bound, Rng& rng);

/// Diagonal-cost chain system: A = g·I − c·L with L the path-graph Laplacian,
/// actuator j driving state 2j with gain beta, Q = I, R = r·I.
AgentTypeSpec chain_spec(std::uint32_t type_id, std::size_t d, std::size_t b, double g, double c,
                         double beta, double r);

/// The three shipped types: (d, b) = (2, 1), (4, 2), (6, 3).
std::vector<AgentTypeSpec> shipped_specs();

}  // namespace fsdt

#endif  // FSDT_ENV_HPP_
