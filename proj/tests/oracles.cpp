#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "fsdt/dataset.hpp"

namespace oracle {

using namespace fsdt;

Monolithic monolithic_step(const ClientModel& client, const ServerDecoder& G,
                           const std::vector<ContextWindow>& batch) {
  Graph g;
  std::vector<std::uint8_t> mask;
  const Var tokens = embed(g, client.E, batch, &mask);
  const Var out = decode(g, G, tokens, mask, 3 * batch.front().h);
  const Var loss = action_loss(g, client.P, out, batch);
  g.backward(loss);
  Monolithic m;
  m.loss = g.value(loss).item();
  m.outputs = g.value(out);
  m.token_grads = g.grad(out);
  m.input_grads = g.grad(tokens);
  for (const Parameter* p : client.parameters()) m.client_grads.push_back(*g.parameter_grad(*p));
  for (const Parameter* p : G.parameters()) {
    const Tensor* gr = g.parameter_grad(*p);
    m.server_grads.push_back(gr ? *gr : Tensor(p->value.shape()));
  }
  return m;
}

namespace {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Tensor& t) {
  Rows r(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) r[i][j] = t.at(i, j);
  }
  return r;
}

Rows norm(const Rows& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Rows y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v / n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean) / n;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      y[i][j] = gamma[j] * (x[i][j] - mean) / std::sqrt(var + eps) + beta[j];
    }
  }
  return y;
}

Rows affine(const Rows& x, const Tensor& w, const Tensor& b) {
  Rows y(x.size(), std::vector<double>(w.cols()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < w.cols(); ++o) {
      double acc = b[o];
      for (std::size_t k = 0; k < w.rows(); ++k) acc += x[i][k] * w.at(k, o);
      y[i][o] = acc;
    }
  }
  return y;
}

}  // namespace

Tensor naive_decode(const ServerDecoder& G, const Tensor& tokens, const std::vector<std::uint8_t>& mask,
                    std::size_t seq_len) {
  const auto& c = G.config();
  const std::size_t D = c.width;
  const std::size_t H = c.n_heads;
  const std::size_t hd = D / H;
  Rows x = to_rows(tokens);
  for (const auto& blk : G.blocks()) {
    const Rows qkv = affine(norm(x, blk.ln1_g.value, blk.ln1_b.value, c.ln_eps), blk.w_qkv.value,
                            blk.b_qkv.value);
    Rows att(x.size(), std::vector<double>(D, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t start = (i / seq_len) * seq_len;
      for (std::size_t h = 0; h < H; ++h) {
        std::vector<double> logits;
        std::vector<std::size_t> keys;
        for (std::size_t j = start; j <= i; ++j) {
          if (!mask[j]) continue;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += qkv[i][h * hd + e] * qkv[j][D + h * hd + e];
          logits.push_back(s / std::sqrt(static_cast<double>(hd)));
          keys.push_back(j);
        }
        if (keys.empty()) continue;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t k = 0; k < keys.size(); ++k) {
          for (std::size_t e = 0; e < hd; ++e) {
            att[i][h * hd + e] += logits[k] / z * qkv[keys[k]][2 * D + h * hd + e];
          }
        }
      }
    }
    const Rows o = affine(att, blk.w_o.value, blk.b_o.value);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < D; ++j) x[i][j] += o[i][j];
    }
    Rows f = affine(norm(x, blk.ln2_g.value, blk.ln2_b.value, c.ln_eps), blk.w_1.value, blk.b_1.value);
    for (auto& row : f) {
      for (double& v : row) {
        v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      }
    }
    const Rows f2 = affine(f, blk.w_2.value, blk.b_2.value);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < D; ++j) x[i][j] += f2[i][j];
    }
  }
  if (c.final_norm) x = norm(x, G.final_gamma().value, G.final_beta().value, c.ln_eps);
  Tensor out(tokens.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < D; ++j) out.at(i, j) = x[i][j];
  }
  return out;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

void randomize(Parameter& p, Rng& rng, double scale) {
  for (double& v : p.value.data()) v = scale * rng.normal();
}

void randomize(ServerDecoder& G, Rng& rng, double scale) {
  for (Parameter* p : G.parameters()) {
    randomize(*p, rng, scale);
    if (p->name.find("_g") != std::string::npos) {
      for (double& v : p->value.data()) v += 1.0;
    }
  }
}

void randomize(ClientModel& m, Rng& rng, double scale) {
  for (Parameter* p : m.parameters()) randomize(*p, rng, scale);
}

std::vector<ContextWindow> random_windows(const AgentTypeSpec& spec, std::size_t n, std::size_t h,
                                          std::uint64_t seed) {
  const Dataset ds = generate_dataset(spec, Tier::Replay, 3, seed);
  ClientShard shard;
  shard.type_id = spec.type_id;
  shard.trajectories = ds.episodes;
  Rng rng(seed + 1);
  return sample_batch(shard, n, h, rng);
}

double max_abs_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, fsdt::max_abs_diff(a[i], b[i]));
  return m;
}

std::size_t client_parameter_count(std::size_t d, std::size_t b, std::size_t width,
                                   std::size_t max_t) {
  // φ_r, φ_s, φ_a with biases, the timestep table, then two D→b heads.
  return (1 + d + b + 3) * width + max_t * width + 2 * (width * b + b);
}

}  // namespace oracle

namespace oracle {

namespace {

Parameter param(const std::string& name, Shape shape, Rng& rng, double scale = 1.0) {
  return Parameter{name, random_tensor(std::move(shape), rng, scale)};
}

/// Σ out ⊙ R with R fixed per check.
Var probe(Graph& g, Var out, const Tensor& r) { return g.sum(g.mul(out, g.constant(r))); }

NamedCheck run(const std::string& name, const std::function<Var(Graph&)>& body,
               std::vector<Parameter*> params, Rng& rng, double floor = 1e-6) {
  // Probe weights are drawn once from the output shape of a dry run.
  Graph dry;
  const Shape shape = dry.value(body(dry)).shape();
  const Tensor r = random_tensor(shape, rng);
  const LossBuilder loss = [&](Graph& g) { return probe(g, body(g), r); };
  return {name, grad_check(loss, params, 1e-5, floor)};
}

}  // namespace

std::vector<NamedCheck> op_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  auto a = param("a", {3, 4}, rng);
  auto b = param("b", {4, 5}, rng);
  auto c = param("c", {3, 4}, rng);
  auto e = param("e", {3, 4}, rng);
  auto bias = param("bias", {4}, rng);
  auto gamma = param("gamma", {4}, rng);
  auto beta = param("beta", {4}, rng);
  auto qkv = param("qkv", {6, 12}, rng);

  out.push_back(run("matmul", [&](Graph& g) { return g.matmul(g.parameter(a), g.parameter(b)); },
                    {&a, &b}, rng));
  out.push_back(run("add", [&](Graph& g) { return g.add(g.parameter(a), g.parameter(c)); },
                    {&a, &c}, rng));
  out.push_back(run("add_bias", [&](Graph& g) { return g.add_bias(g.parameter(a), g.parameter(bias)); },
                    {&a, &bias}, rng));
  out.push_back(run("mul", [&](Graph& g) { return g.mul(g.parameter(a), g.parameter(c)); },
                    {&a, &c}, rng));
  out.push_back(run("scale", [&](Graph& g) { return g.scale(g.parameter(a), -1.7); }, {&a}, rng));
  out.push_back(run("sum", [&](Graph& g) { return g.sum(g.parameter(a)); }, {&a}, rng));
  out.push_back(run("mean", [&](Graph& g) { return g.mean(g.parameter(a)); }, {&a}, rng));
  out.push_back(run("layer_norm",
                    [&](Graph& g) {
                      return g.layer_norm(g.parameter(a), g.parameter(gamma), g.parameter(beta), 1e-5);
                    },
                    {&a, &gamma, &beta}, rng));
  out.push_back(run("gelu", [&](Graph& g) { return g.gelu(g.parameter(a)); }, {&a}, rng));
  out.push_back(run("softmax", [&](Graph& g) { return g.softmax(g.parameter(a)); }, {&a}, rng));
  const std::vector<std::uint8_t> mask = {0, 1, 1, 1, 1, 1};
  out.push_back(run("causal_attention",
                    [&](Graph& g) { return g.causal_attention(g.parameter(qkv), mask, 2, 3); },
                    {&qkv}, rng));
  out.push_back(run("gather_rows",
                    [&](Graph& g) { return g.gather_rows(g.parameter(a), {2, 0, 2, 1}); }, {&a}, rng));
  out.push_back(run("interleave3",
                    [&](Graph& g) {
                      return g.interleave3(g.parameter(a), g.parameter(c), g.parameter(e));
                    },
                    {&a, &c, &e}, rng));
  out.push_back(run("mask_rows", [&](Graph& g) { return g.mask_rows(g.parameter(a), {1, 0, 1}); },
                    {&a}, rng));
  {
    auto mu = param("mu", {3, 2}, rng);
    auto ls = param("log_sigma", {3, 2}, rng, 0.5);
    const Tensor target = random_tensor({3, 2}, rng);
    const LossBuilder loss = [&](Graph& g) {
      return g.gaussian_nll(g.parameter(mu), g.parameter(ls), target, -5.0, 2.0);
    };
    out.push_back({"gaussian_nll", grad_check(loss, {&mu, &ls}, 1e-5)});
  }
  return out;
}

// Key biases get an exactly zero gradient (softmax shift invariance); their
// central differences are pure rounding noise of order 1e-10.
constexpr double kModelFloor = 1e-5;

std::vector<NamedCheck> model_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  DecoderConfig cfg;
  cfg.width = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  ServerDecoder G(cfg, seed);
  randomize(G, rng, 0.3);
  std::vector<Parameter*> g_params = G.parameters();

  {
    auto tokens = param("tokens", {12, 8}, rng);
    const std::vector<std::uint8_t> mask = {0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1};
    for (std::size_t c = 0; c < 8; ++c) {
      for (std::size_t r = 0; r < 3; ++r) tokens.value.at(r, c) = 0.0;
    }
    std::vector<Parameter*> ps = g_params;
    ps.push_back(&tokens);
    out.push_back(run("decoder",
                      [&](Graph& g) { return decode(g, G, g.parameter(tokens), mask, 6); }, ps, rng,
                      kModelFloor));
  }
  {
    const AgentTypeSpec spec = shipped_specs()[1];
    ClientModel client = make_client_model(spec.type_id, spec.d, spec.b, cfg.width, spec.horizon,
                                           1000.0, seed + 1);
    randomize(client, rng, 0.3);
    auto batch = random_windows(spec, 3, 2, seed + 2);
    batch.push_back(window(generate_dataset(spec, Tier::Medium, 1, seed + 3).episodes[0], 0, 2));
    std::vector<Parameter*> ps = client.parameters();
    ps.insert(ps.end(), g_params.begin(), g_params.end());
    const LossBuilder loss = [&](Graph& g) {
      std::vector<std::uint8_t> mask;
      const Var tokens = embed(g, client.E, batch, &mask);
      return action_loss(g, client.P, decode(g, G, tokens, mask, 6), batch);
    };
    out.push_back({"composed loss", grad_check(loss, ps, 1e-5, kModelFloor)});
  }
  return out;
}

}  // namespace oracle

namespace oracle {

fsdt::FederationConfig tiny_config() {
  fsdt::FederationConfig c;
  c.profile = "tiny";
  c.clients_per_type = {1, 1, 1};
  c.rounds = 2;
  c.local_steps = 3;
  c.server_steps = 3;
  c.batch_size = 2;
  c.context_length = 2;
  c.client_lr = 1e-3;
  c.server_lr = 1e-3;
  c.seed = 17;
  c.episodes_per_client = 2;
  c.baseline_episodes = 5;
  c.eval_every = 1;
  c.eval_episodes = 2;
  c.decoder.width = 8;
  c.decoder.n_layers = 1;
  c.decoder.n_heads = 2;
  c.decoder.d_ff = 16;
  return c;
}

}  // namespace oracle
