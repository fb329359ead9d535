#include "fsdt/env.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

#include "fsdt/tensor.hpp"

namespace fsdt {

namespace {

constexpr double kRiccatiTol = 1e-10;
constexpr int kRiccatiMaxIter = 10000;

void require_spd(const Eigen::MatrixXd& m, const char* what) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw ContractError(std::string(what) + " is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw ContractError(std::string(what) + " is not positive definite");
  }
}

Eigen::MatrixXd gain(const AgentTypeSpec& spec, const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd S = spec.R + spec.B.transpose() * P * spec.B;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw ContractError("riccati: R + BᵀPB not positive definite");
  return llt.solve(spec.B.transpose() * P * spec.A);
}

}  // namespace

std::string_view tier_name(Tier tier) {
  switch (tier) {
    case Tier::Expert: return "expert";
    case Tier::Medium: return "medium";
    case Tier::Replay: return "replay";
    case Tier::Random: return "random";
  }
  return "unknown";
}

Tier parse_tier(std::string_view name) {
  for (Tier t : {Tier::Expert, Tier::Medium, Tier::Replay, Tier::Random}) {
    if (tier_name(t) == name) return t;
  }
  throw ContractError("unknown tier '" + std::string(name) + "'");
}

void validate(const AgentTypeSpec& spec) {
  const auto d = static_cast<Eigen::Index>(spec.d);
  const auto b = static_cast<Eigen::Index>(spec.b);
  if (spec.d < 1 || spec.b < 1) throw ContractError("spec: d and b must be at least 1");
  if (spec.A.rows() != d || spec.A.cols() != d || spec.B.rows() != d || spec.B.cols() != b ||
      spec.Q.rows() != d || spec.Q.cols() != d || spec.R.rows() != b || spec.R.cols() != b) {
    throw ContractError("spec: matrix shapes do not match d=" + std::to_string(spec.d) +
                        ", b=" + std::to_string(spec.b));
  }
  require_spd(spec.Q, "Q");
  require_spd(spec.R, "R");
  if (!(spec.noise_std >= 0.0)) throw ContractError("spec: noise_std must be non-negative");
  if (spec.horizon < 1) throw ContractError("spec: horizon must be at least 1");
  if (!(spec.action_bound > 0.0)) throw ContractError("spec: action_bound must be positive");
  const LqrSolution lqr = solve_lqr(spec);
  const double rho = spectral_radius(spec.A - spec.B * lqr.K);
  if (!(rho < 1.0)) {
    throw ContractError("spec: LQR closed loop has spectral radius " + std::to_string(rho));
  }
}

Eigen::MatrixXd riccati_map(const AgentTypeSpec& spec, const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd K = gain(spec, P);
  Eigen::MatrixXd next = spec.Q + spec.A.transpose() * P * spec.A -
                         spec.A.transpose() * P * spec.B * K;
  return 0.5 * (next + next.transpose());
}

LqrSolution solve_lqr(const AgentTypeSpec& spec) {
  Eigen::MatrixXd P = spec.Q;
  for (int it = 1; it <= kRiccatiMaxIter; ++it) {
    Eigen::MatrixXd next = riccati_map(spec, P);
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change < kRiccatiTol) return LqrSolution{P, gain(spec, P), it};
  }
  throw ContractError("riccati iteration did not converge after " +
                      std::to_string(kRiccatiMaxIter) + " iterations");
}

double spectral_radius(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

EnvState reset(const AgentTypeSpec& spec, Rng& rng) {
  EnvState st;
  st.s.resize(static_cast<Eigen::Index>(spec.d));
  for (Eigen::Index i = 0; i < st.s.size(); ++i) st.s[i] = rng.normal();
  const double n = st.s.norm();
  if (n > 1.0) st.s /= n;
  return st;
}

Eigen::VectorXd clamp_action(const Eigen::VectorXd& a, double bound) {
  return a.cwiseMax(-bound).cwiseMin(bound);
}

StepResult step(const AgentTypeSpec& spec, const EnvState& state, const Eigen::VectorXd& a,
                Rng& rng) {
  if (state.t >= spec.horizon) throw ContractError("step: episode already terminated");
  if (state.s.size() != static_cast<Eigen::Index>(spec.d) ||
      a.size() != static_cast<Eigen::Index>(spec.b)) {
    throw ShapeError("step: state or action has the wrong dimension");
  }
  if (!a.allFinite()) throw NumericError("step: non-finite action");
  const Eigen::VectorXd u = clamp_action(a, spec.action_bound);
  StepResult out;
  out.reward = -(state.s.dot(spec.Q * state.s) + u.dot(spec.R * u));
  out.state.s = spec.A * state.s + spec.B * u;
  for (Eigen::Index i = 0; i < out.state.s.size(); ++i) {
    out.state.s[i] += spec.noise_std * rng.normal();
  }
  out.state.t = state.t + 1;
  return out;
}

Eigen::VectorXd scripted_action(Tier tier, const Eigen::MatrixXd& K, const Eigen::VectorXd& s,
                                double bound, Rng& rng) {
  const auto b = K.rows();
  auto uniform = [&] {
    Eigen::VectorXd a(b);
    for (Eigen::Index i = 0; i < b; ++i) a[i] = rng.uniform(-bound, bound);
    return a;
  };
  auto medium = [&] {
    Eigen::VectorXd a = -K * s;
    for (Eigen::Index i = 0; i < b; ++i) a[i] += 0.5 * bound * rng.normal();
    return a;
  };
  switch (tier) {
    case Tier::Expert: return clamp_action(-K * s, bound);
    case Tier::Medium: return clamp_action(medium(), bound);
    case Tier::Replay: return clamp_action(rng.uniform01() < 0.5 ? medium() : uniform(), bound);
    case Tier::Random: return uniform();
  }
  throw ContractError("scripted_action: bad tier");
}

AgentTypeSpec chain_spec(std::uint32_t type_id, std::size_t d, std::size_t b, double g, double c,
                         double beta, double r) {
  if (2 * (b - 1) >= d) throw ContractError("chain_spec: need d > 2(b-1)");
  AgentTypeSpec spec;
  spec.type_id = type_id;
  spec.d = d;
  spec.b = b;
  const auto n = static_cast<Eigen::Index>(d);
  spec.A = g * Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    spec.A(i, i) -= c;
    spec.A(i + 1, i + 1) -= c;
    spec.A(i, i + 1) += c;
    spec.A(i + 1, i) += c;
  }
  spec.B = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(b));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(b); ++j) spec.B(2 * j, j) = beta;
  spec.Q = Eigen::MatrixXd::Identity(n, n);
  spec.R = r * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
  return spec;
}

std::vector<AgentTypeSpec> shipped_specs() {
  std::vector<AgentTypeSpec> specs = {
      chain_spec(0, 2, 1, 1.06, 0.1, 0.05, 2.0),
      chain_spec(1, 4, 2, 1.07, 0.2, 0.05, 1.0),
      chain_spec(2, 6, 3, 1.07, 0.1, 0.05, 1.0),
  };
  for (const auto& s : specs) validate(s);
  return specs;
}

}  // namespace fsdt
