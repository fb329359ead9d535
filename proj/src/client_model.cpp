#include "fsdt/client_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fsdt {

void init_uniform(Parameter& p, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
}

namespace {

Parameter zeros(std::string name, Shape shape) { return Parameter{std::move(name), Tensor(std::move(shape))}; }

}  // namespace

std::vector<Parameter*> ClientModel::parameters() {
  return {&E.w_r, &E.b_r, &E.w_s, &E.b_s, &E.w_a, &E.b_a, &E.omega,
          &P.w_mu, &P.b_mu, &P.w_ls, &P.b_ls};
}

std::vector<const Parameter*> ClientModel::parameters() const {
  return {&E.w_r, &E.b_r, &E.w_s, &E.b_s, &E.w_a, &E.b_a, &E.omega,
          &P.w_mu, &P.b_mu, &P.w_ls, &P.b_ls};
}

std::size_t ClientModel::parameter_count() const {
  return embedding_parameter_count() + prediction_parameter_count();
}

std::size_t ClientModel::embedding_parameter_count() const {
  return E.w_r.value.size() + E.b_r.value.size() + E.w_s.value.size() + E.b_s.value.size() +
         E.w_a.value.size() + E.b_a.value.size() + E.omega.value.size();
}

std::size_t ClientModel::prediction_parameter_count() const {
  return P.w_mu.value.size() + P.b_mu.value.size() + P.w_ls.value.size() + P.b_ls.value.size();
}

void ClientModel::set_frozen(bool frozen) {
  for (Parameter* p : parameters()) p->frozen = frozen;
}

std::uint64_t ClientModel::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const Parameter* p : parameters()) h = hash_bytes(p->value.data(), h);
  return h;
}

ClientModel make_client_model(std::uint32_t type_id, std::size_t d, std::size_t b, std::size_t width,
                              std::size_t max_timestep, double rtg_scale, std::uint64_t seed) {
  if (d == 0 || b == 0 || width == 0 || max_timestep == 0) {
    throw ContractError("client model: all dimensions must be positive");
  }
  if (!(rtg_scale > 0.0)) throw ContractError("client model: rtg_scale must be positive");
  ClientModel m;
  m.type_id = type_id;
  auto& E = m.E;
  auto& P = m.P;
  E.w_r = zeros("E.w_r", {1, width});
  E.b_r = zeros("E.b_r", {width});
  E.w_s = zeros("E.w_s", {d, width});
  E.b_s = zeros("E.b_s", {width});
  E.w_a = zeros("E.w_a", {b, width});
  E.b_a = zeros("E.b_a", {width});
  E.omega = zeros("E.omega", {max_timestep, width});
  E.rtg_scale = rtg_scale;
  P.w_mu = zeros("P.w_mu", {width, b});
  P.b_mu = zeros("P.b_mu", {b});
  P.w_ls = zeros("P.w_ls", {width, b});
  P.b_ls = zeros("P.b_ls", {b});
  init_uniform(E.w_r, 1, derive_seed(seed, 0));
  init_uniform(E.w_s, d, derive_seed(seed, 1));
  init_uniform(E.w_a, b, derive_seed(seed, 2));
  init_uniform(E.omega, width, derive_seed(seed, 3));
  init_uniform(P.w_mu, width, derive_seed(seed, 4));
  init_uniform(P.w_ls, width, derive_seed(seed, 5));
  return m;
}

Var embed(Graph& g, const EmbeddingModel& E, const std::vector<ContextWindow>& windows,
          std::vector<std::uint8_t>* mask) {
  if (windows.empty()) throw ContractError("embed: no windows");
  const std::size_t h = windows.front().h;
  const std::size_t d = E.state_dim();
  const std::size_t b = E.action_dim();
  const std::size_t rows = windows.size() * h;
  Tensor rtg(Shape{rows, 1});
  Tensor states(Shape{rows, d});
  Tensor actions(Shape{rows, b});
  std::vector<std::size_t> steps(rows);
  std::vector<std::uint8_t> token_mask(3 * rows);
  for (std::size_t n = 0; n < windows.size(); ++n) {
    const ContextWindow& w = windows[n];
    if (w.h != h) throw ShapeError("embed: windows of different lengths in one batch");
    if (w.d != d || w.b != b) {
      throw ShapeError("embed: window (d=" + std::to_string(w.d) + ", b=" + std::to_string(w.b) +
                       ") does not match model (d=" + std::to_string(d) +
                       ", b=" + std::to_string(b) + ")");
    }
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t r = n * h + i;
      if (w.timesteps[i] >= E.max_timestep()) {
        throw ContractError("embed: timestep " + std::to_string(w.timesteps[i]) +
                            " beyond table of " + std::to_string(E.max_timestep()));
      }
      rtg[r] = w.rtg[i] / E.rtg_scale;
      std::copy_n(w.states.begin() + static_cast<std::ptrdiff_t>(i * d), d, states.row(r).begin());
      std::copy_n(w.actions.begin() + static_cast<std::ptrdiff_t>(i * b), b, actions.row(r).begin());
      steps[r] = w.timesteps[i];
      for (std::size_t j = 0; j < 3; ++j) token_mask[3 * r + j] = w.mask[i];
    }
  }
  const Var omega = g.gather_rows(g.parameter(E.omega), std::move(steps));
  auto slot = [&](Tensor x, const Parameter& w, const Parameter& bias) {
    const Var lin = g.add_bias(g.matmul(g.constant(std::move(x)), g.parameter(w)), g.parameter(bias));
    return g.add(lin, omega);
  };
  const Var ur = slot(std::move(rtg), E.w_r, E.b_r);
  const Var us = slot(std::move(states), E.w_s, E.b_s);
  const Var ua = slot(std::move(actions), E.w_a, E.b_a);
  const Var tokens = g.mask_rows(g.interleave3(ur, us, ua), token_mask);
  if (mask) mask->insert(mask->end(), token_mask.begin(), token_mask.end());
  return tokens;
}

TokenSequence embed(const EmbeddingModel& E, const ContextWindow& w) {
  Graph g;
  TokenSequence out;
  out.tokens = g.value(embed(g, E, {w}, &out.mask));
  return out;
}

std::vector<std::size_t> state_token_rows(const std::vector<ContextWindow>& windows) {
  std::vector<std::size_t> rows;
  std::size_t base = 0;
  for (const auto& w : windows) {
    for (std::size_t i = 0; i < w.h; ++i) {
      if (w.mask[i]) rows.push_back(base + 3 * i + 1);
    }
    base += 3 * w.h;
  }
  return rows;
}

Tensor real_targets(const std::vector<ContextWindow>& windows) {
  const std::size_t b = windows.front().b;
  std::vector<double> data;
  for (const auto& w : windows) {
    for (std::size_t i = 0; i < w.h; ++i) {
      if (!w.mask[i]) continue;
      data.insert(data.end(), w.targets.begin() + static_cast<std::ptrdiff_t>(i * b),
                  w.targets.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
    }
  }
  const std::size_t n = data.size() / b;
  return Tensor(Shape{n, b}, std::move(data));
}

HeadOutput predict(Graph& g, const PredictionModel& P, Var v) {
  if (g.value(v).cols() != P.w_mu.value.rows()) {
    throw ShapeError("predict: token width " + std::to_string(g.value(v).cols()) +
                     " vs head width " + std::to_string(P.w_mu.value.rows()));
  }
  HeadOutput out;
  out.mu = g.add_bias(g.matmul(v, g.parameter(P.w_mu)), g.parameter(P.b_mu));
  out.log_sigma = g.add_bias(g.matmul(v, g.parameter(P.w_ls)), g.parameter(P.b_ls));
  return out;
}

Var action_loss(Graph& g, const PredictionModel& P, Var tokens,
                const std::vector<ContextWindow>& windows) {
  const Var v = g.gather_rows(tokens, state_token_rows(windows));
  const HeadOutput head = predict(g, P, v);
  return g.gaussian_nll(head.mu, head.log_sigma, real_targets(windows), kLogSigmaMin, kLogSigmaMax);
}

GaussianAction predict(const PredictionModel& P, std::span<const double> v_s) {
  const std::size_t width = P.w_mu.value.rows();
  const std::size_t b = P.w_mu.value.cols();
  if (v_s.size() != width) {
    throw ShapeError("predict: token width " + std::to_string(v_s.size()) + " vs head width " +
                     std::to_string(width));
  }
  GaussianAction out{Eigen::VectorXd(static_cast<Eigen::Index>(b)),
                     Eigen::VectorXd(static_cast<Eigen::Index>(b))};
  for (std::size_t j = 0; j < b; ++j) {
    double mu = P.b_mu.value[j];
    double ls = P.b_ls.value[j];
    for (std::size_t i = 0; i < width; ++i) {
      mu += v_s[i] * P.w_mu.value.at(i, j);
      ls += v_s[i] * P.w_ls.value.at(i, j);
    }
    out.mu[static_cast<Eigen::Index>(j)] = mu;
    out.sigma[static_cast<Eigen::Index>(j)] = std::exp(std::clamp(ls, kLogSigmaMin, kLogSigmaMax));
  }
  return out;
}

double action_nll(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma,
                  const Eigen::VectorXd& a) {
  if (mu.size() != sigma.size() || mu.size() != a.size()) throw ShapeError("action_nll: shape mismatch");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw ContractError("action_nll: sigma must be positive");
    const double z = (a[i] - mu[i]) / sigma[i];
    total += std::log(sigma[i]) + 0.5 * z * z + half_log_2pi;
  }
  return total;
}

Eigen::VectorXd eval_action(const PredictionModel& P, std::span<const double> v_s, ActionMode mode,
                            double bound, Rng& rng) {
  const GaussianAction g = predict(P, v_s);
  Eigen::VectorXd a = g.mu;
  if (mode == ActionMode::Sample) {
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += g.sigma[i] * rng.normal();
  }
  return a.cwiseMax(-bound).cwiseMin(bound);
}

}  // namespace fsdt
