// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fsdt/checkpoint.hpp"
#include "fsdt/dataset.hpp"
#include "fsdt/experiments.hpp"
#include "fsdt/federation.hpp"
#include "oracles.hpp"

using namespace fsdt;

namespace {

// Pinned tolerances and limits.
constexpr double kSplitTol = 1e-10;
constexpr double kSplitSeconds = 60.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kAggregateTol = 1e-15;
constexpr double kServerShare = 0.80;
constexpr double kDeskSeconds = 600.0;
constexpr double kDeskGain = 30.0;
constexpr std::uint64_t kDeskSeed = 1;
constexpr double kTierGap = 0.05;
constexpr double kTierSeconds = 60.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Outcome split_equivalence() {
  const auto t0 = Clock::now();
  const auto specs = shipped_specs();
  Rng rng(101);
  ServerDecoder G(DecoderConfig{}, 7);
  oracle::randomize(G, rng, 0.05);
  double worst = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& spec = specs[i % specs.size()];
    ClientModel client = make_client_model(spec.type_id, spec.d, spec.b, 128, spec.horizon,
                                           100.0, derive_seed(11, i));
    oracle::randomize(client, rng, 0.2);
    const std::size_t h = 1 + rng.uniform_int(6);
    const std::size_t n = 1 + rng.uniform_int(6);
    const auto batch = oracle::random_windows(spec, n, h, derive_seed(12, i));
    const auto ref = oracle::monolithic_step(client, G, batch);
    for (Stage stage : {Stage::One, Stage::Two}) {
      const auto s = split_step(client, G, batch, stage, nullptr);
      worst = std::max(worst, std::abs(s.loss - ref.loss));
      worst = std::max(worst, max_abs_diff(s.token_grads, ref.token_grads));
      worst = std::max(worst, max_abs_diff(s.input_grads, ref.input_grads));
      worst = std::max(worst, max_abs_diff(s.outputs, ref.outputs));
      if (stage == Stage::One) {
        worst = std::max(worst, oracle::max_abs_diff(s.client_grads, ref.client_grads));
      } else {
        worst = std::max(worst, oracle::max_abs_diff(s.server_grads, ref.server_grads));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kSplitTol && secs < kSplitSeconds,
          fmt("max abs diff %.3e (tol %.0e), %.1fs", worst, kSplitTol, secs)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  auto checks = oracle::op_gradient_suite(202);
  for (auto& c : oracle::model_gradient_suite(203)) checks.push_back(std::move(c));
  double worst = 0.0;
  std::string where;
  std::size_t scalars = 0;
  for (const auto& c : checks) {
    scalars += c.result.checked;
    if (c.result.max_rel_error >= worst) {
      worst = c.result.max_rel_error;
      where = c.name + " " + c.result.worst;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradSeconds,
          fmt("%zu checks, %zu scalars, worst rel %.3e at %s (tol %.0e), %.1fs", checks.size(),
              scalars, worst, where.c_str(), kGradTol, secs)};
}

Outcome freeze_exactness() {
  auto config = oracle::tiny_config();
  config.rounds = 5;
  config.eval_every = 0;
  Federation fed(config, prepare_data(config, shipped_specs()));
  std::size_t violations = 0;
  std::size_t checks = 0;
  for (std::size_t r = 0; r < 5; ++r) {
    const auto g_before = fed.decoder().hash();
    fed.stage_one();
    ++checks;
    if (fed.decoder().hash() != g_before) ++violations;
    std::vector<std::uint64_t> before;
    for (const auto& g : fed.globals()) before.push_back(g.model.hash());
    for (const auto& c : fed.clients()) before.push_back(c.model.hash());
    const auto g_mid = fed.decoder().hash();
    fed.stage_two();
    std::vector<std::uint64_t> after;
    for (const auto& g : fed.globals()) after.push_back(g.model.hash());
    for (const auto& c : fed.clients()) after.push_back(c.model.hash());
    ++checks;
    if (after != before) ++violations;
    if (fed.decoder().hash() == g_mid) ++violations;  // stage two must move G
  }
  return {violations == 0, fmt("%zu hash comparisons over 5 rounds, %zu violations", checks, violations)};
}

Outcome aggregation() {
  Rng rng(404);
  const auto spec = shipped_specs()[2];
  std::vector<ClientModel> clients;
  for (std::size_t i = 0; i < 5; ++i) {
    clients.push_back(make_client_model(spec.type_id, spec.d, spec.b, 128, spec.horizon, 50.0, i));
    oracle::randomize(clients.back(), rng, 1.0);
  }
  std::vector<const ClientModel*> ptrs;
  for (const auto& c : clients) ptrs.push_back(&c);
  const auto global = aggregate_type(ptrs);

  double worst = 0.0;
  const auto gp = global.model.parameters();
  for (std::size_t t = 0; t < gp.size(); ++t) {
    for (std::size_t j = 0; j < gp[t]->value.size(); ++j) {
      double sum = 0.0;
      for (const auto& c : clients) sum += c.parameters()[t]->value[j];
      worst = std::max(worst, std::abs(gp[t]->value[j] - sum / 5.0));
    }
  }

  std::vector<ClientHandle> handles(5);
  std::vector<ClientHandle*> hp;
  for (std::size_t i = 0; i < handles.size(); ++i) {
    handles[i].id = i;
    handles[i].type_id = spec.type_id;
    handles[i].model = clients[i];
    hp.push_back(&handles[i]);
  }
  ChannelLedger ledger;
  distribute_type(global, hp, ledger);
  std::vector<const ClientModel*> copies;
  for (const auto& h : handles) copies.push_back(&h.model);
  const bool fixed_point = aggregate_type(copies).model.hash() == global.model.hash();

  bool permutation = true;
  std::vector<std::size_t> order = {0, 1, 2, 3, 4};
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = 4; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    std::vector<const ClientModel*> shuffled;
    for (auto i : order) shuffled.push_back(ptrs[i]);
    permutation = permutation && aggregate_type(shuffled).model.hash() == global.model.hash();
  }
  return {worst <= kAggregateTol && fixed_point && permutation,
          fmt("max diff to per-scalar mean %.3e (tol %.0e), fixed point %s, permutation-invariant %s",
              worst, kAggregateTol, fixed_point ? "exact" : "broken", permutation ? "yes" : "no")};
}

Outcome causality() {
  Rng rng(505);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    DecoderConfig c;
    c.n_heads = std::size_t{1} << rng.uniform_int(3);
    c.width = c.n_heads * (2 + rng.uniform_int(4));
    c.n_layers = 1 + rng.uniform_int(4);
    c.d_ff = 2 * c.width;
    c.final_norm = rng.uniform01() < 0.5;
    ServerDecoder G(c, derive_seed(5, static_cast<std::uint64_t>(trial)));
    oracle::randomize(G, rng, 0.5);
    const std::size_t L = 3 * (1 + rng.uniform_int(10));
    Tensor x = oracle::random_tensor({L, c.width}, rng);
    std::vector<std::uint8_t> mask(L, 1);
    const std::size_t pad = 3 * rng.uniform_int(L / 3);
    for (std::size_t r = 0; r < pad; ++r) {
      mask[r] = 0;
      for (std::size_t j = 0; j < c.width; ++j) x.at(r, j) = 0.0;
    }
    const Tensor before = decode(G, x, mask, L);
    const std::size_t p = rng.uniform_int(L);
    for (std::size_t r = p; r < L; ++r) {
      for (std::size_t j = 0; j < c.width; ++j) x.at(r, j) += rng.normal();
    }
    const Tensor after = decode(G, x, mask, L);
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t j = 0; j < c.width; ++j) {
        if (before.at(r, j) != after.at(r, j)) {
          ++violations;
          r = p;
          break;
        }
      }
    }
  }
  return {violations == 0, fmt("100 configurations, %zu with a changed past row", violations)};
}

Outcome ledger_exactness() {
  auto config = oracle::tiny_config();
  config.clients_per_type = {2, 1, 3};
  config.rounds = 2;
  config.eval_every = 0;
  const auto specs = shipped_specs();
  Federation fed(config, prepare_data(config, specs));
  const auto metrics = fed.run();

  const std::uint64_t w = config.wire_bytes;
  const std::uint64_t D = config.decoder.width;
  const std::uint64_t L = 3 * config.context_length;
  std::uint64_t steps = config.server_steps;
  std::uint64_t params = 0;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const std::uint64_t n = config.clients_per_type[k];
    steps += n * config.local_steps;
    params += n * oracle::client_parameter_count(specs[k].d, specs[k].b, D, specs[k].horizon);
  }
  const std::uint64_t expect = steps * config.batch_size * 4 * L * D * w + 2 * params * w;
  bool rounds_ok = metrics.size() == 2;
  for (const auto& m : metrics) rounds_ok = rounds_ok && total(m.bytes) == expect;

  auto activation = [&](std::size_t h) {
    auto c = config;
    c.context_length = h;
    c.rounds = 1;
    Federation f(c, prepare_data(c, specs));
    f.run();
    return f.ledger().cumulative()[static_cast<std::size_t>(MessageClass::ActivationsUp)];
  };
  const std::uint64_t a5 = activation(5);
  const std::uint64_t a10 = activation(10);
  const bool ratio_ok = a10 == 2 * a5;
  return {rounds_ok && ratio_ok,
          fmt("per-round total %llu vs closed form %llu; activation bytes h=10 %llu = 2 x h=5 %llu: %s",
              static_cast<unsigned long long>(metrics.empty() ? 0 : total(metrics[0].bytes)),
              static_cast<unsigned long long>(expect), static_cast<unsigned long long>(a10),
              static_cast<unsigned long long>(a5), ratio_ok ? "yes" : "no")};
}

Outcome parameter_share() {
  const FederationConfig config = desk_profile();
  const ServerDecoder G(config.decoder, 1);
  const std::size_t g = G.parameter_count();
  const auto specs = shipped_specs();
  std::printf("  %-6s %-7s %10s %10s %10s %8s\n", "type", "(d,b)", "E", "P", "E+P", "clients");
  std::size_t clients_total = 0;
  bool per_type_ok = true;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    const auto m = make_client_model(s.type_id, s.d, s.b, config.decoder.width, s.horizon, 1.0, 1);
    const std::size_t n = config.clients_per_type[k];
    const std::size_t per_client = oracle::client_parameter_count(s.d, s.b, config.decoder.width, s.horizon);
    if (m.parameter_count() != per_client) per_type_ok = false;
    const double type_share = static_cast<double>(n * per_client) / static_cast<double>(g + n * per_client);
    if (type_share >= 1.0 - kServerShare) per_type_ok = false;
    clients_total += n * per_client;
    std::printf("  %-6u (%zu,%zu)   %10zu %10zu %10zu %8zu\n", s.type_id, s.d, s.b,
                m.embedding_parameter_count(), m.prediction_parameter_count(), m.parameter_count(), n);
  }
  const bool g_ok = g == ServerDecoder::expected_parameter_count(config.decoder);
  std::printf("  %-6s %-7s %10s %10s %10zu\n", "G", "", "", "", g);
  const double share = static_cast<double>(g) / static_cast<double>(g + clients_total);
  std::printf("  server share %.4f of %zu parameters\n", share, g + clients_total);
  return {g_ok && per_type_ok && share >= kServerShare,
          fmt("G %zu of %zu total parameters = %.2f%% (threshold %.0f%%)", g, g + clients_total,
              100.0 * share, 100.0 * kServerShare)};
}

Outcome desk_learning() {
  const auto t0 = Clock::now();
  FederationConfig config = desk_profile();
  config.seed = kDeskSeed;
  const auto series = experiment_rounds(config, shipped_specs(), [](const std::string& line) {
    std::printf("  %s\n", line.c_str());
    std::fflush(stdout);
  });
  const double secs = seconds_since(t0);
  const auto& pts = series.points;
  if (pts.size() < 3 || pts.front().round != 0 || pts[1].round != 1) {
    return {false, "evaluation schedule did not produce rounds 0 and 1"};
  }
  bool ok = secs < kDeskSeconds;
  std::string detail;
  for (std::size_t k = 0; k < pts.front().scores.size(); ++k) {
    const double untrained = pts.front().scores[k];
    const double r1 = pts[1].scores[k];
    const double final_score = pts.back().scores[k];
    double best = -1e300;
    for (const auto& p : pts) best = std::max(best, p.scores[k]);
    ok = ok && final_score >= untrained + kDeskGain && best > r1;
    detail += fmt("type %zu untrained %.1f round1 %.1f best %.1f final %.1f; ", k, untrained, r1,
                  best, final_score);
  }
  detail += fmt("%.0fs (limit %.0fs), seed %llu", secs, kDeskSeconds,
                static_cast<unsigned long long>(kDeskSeed));
  return {ok, detail};
}

Outcome tier_ordering() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& spec : shipped_specs()) {
    auto mean = [&](Tier t) {
      const auto r = tier_returns(spec, t, 200, derive_seed(909, spec.type_id));
      return std::accumulate(r.begin(), r.end(), 0.0) / 200.0;
    };
    const double e = mean(Tier::Expert), m = mean(Tier::Medium), p = mean(Tier::Replay),
                 r = mean(Tier::Random);
    const double gap = kTierGap * (e - r);
    ok = ok && e - m > gap && m - p > gap && p - r > gap;
    detail += fmt("type %u E %.1f M %.1f R %.1f rand %.1f; ", spec.type_id, e, m, p, r);
  }
  const double secs = seconds_since(t0);
  detail += fmt("%.1fs", secs);
  return {ok && secs < kTierSeconds, detail};
}

Outcome determinism() {
  auto config = oracle::tiny_config();
  config.rounds = 3;
  auto run_once = [&] {
    Federation fed(config, prepare_data(config, shipped_specs()));
    std::string jsonl;
    for (const auto& m : fed.run()) jsonl += to_jsonl(m) + "\n";
    std::ostringstream ck;
    write_checkpoint(ck, fed);
    return std::pair{jsonl, ck.str()};
  };
  const auto a = run_once();
  const auto b = run_once();
  const bool ok = a.first == b.first && a.second == b.second;
  return {ok, fmt("metrics %zu bytes, checkpoint %zu bytes, identical: %s", a.first.size(),
                  a.second.size(), ok ? "yes" : "no")};
}

}  // namespace

int main() {
  report(1, "split equivalence", split_equivalence);
  report(2, "gradient suite", gradient_suite);
  report(3, "freeze exactness", freeze_exactness);
  report(4, "aggregation", aggregation);
  report(5, "causality", causality);
  report(6, "ledger exactness", ledger_exactness);
  report(7, "server parameter share", parameter_share);
  report(8, "desk learning", desk_learning);
  report(9, "tier ordering", tier_ordering);
  report(10, "determinism", determinism);
  std::printf("%s: %d failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
