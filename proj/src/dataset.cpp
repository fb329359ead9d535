#include "fsdt/dataset.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "binary_io.hpp"

namespace fsdt {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'D', 'T'};
constexpr std::uint16_t kVersion = 1;

struct Episode {
  Tensor states;
  Tensor actions;
  std::vector<double> rewards;
};

Episode roll_episode(const AgentTypeSpec& spec, const Eigen::MatrixXd& K, Tier tier,
                     std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t T = spec.horizon;
  Episode ep{Tensor(Shape{T, spec.d}), Tensor(Shape{T, spec.b}), std::vector<double>(T)};
  EnvState st = reset(spec, rng);
  for (std::size_t t = 0; t < T; ++t) {
    const Eigen::VectorXd a = scripted_action(tier, K, st.s, spec.action_bound, rng);
    for (std::size_t i = 0; i < spec.d; ++i) ep.states.at(t, i) = st.s[static_cast<Eigen::Index>(i)];
    for (std::size_t i = 0; i < spec.b; ++i) ep.actions.at(t, i) = a[static_cast<Eigen::Index>(i)];
    StepResult r = step(spec, st, a, rng);
    ep.rewards[t] = r.reward;
    st = std::move(r.state);
  }
  return ep;
}

}  // namespace

Dataset generate_dataset(const AgentTypeSpec& spec, Tier tier, std::size_t n_episodes,
                         std::uint64_t seed) {
  if (n_episodes == 0) throw ContractError("generate_dataset: n_episodes must be at least 1");
  const Eigen::MatrixXd K = solve_lqr(spec).K;
  Dataset ds{spec.type_id, spec.d, spec.b, spec.horizon, tier, seed, {}};
  ds.episodes.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    Episode ep = roll_episode(spec, K, tier, derive_seed(seed, i));
    ds.episodes.push_back(make_trajectory(spec.type_id, tier, i, std::move(ep.states),
                                          std::move(ep.actions), std::move(ep.rewards)));
  }
  return ds;
}

std::vector<double> tier_returns(const AgentTypeSpec& spec, Tier tier, std::size_t n_episodes,
                                 std::uint64_t seed) {
  const Eigen::MatrixXd K = solve_lqr(spec).K;
  std::vector<double> out;
  out.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const Episode ep = roll_episode(spec, K, tier, derive_seed(seed, i));
    out.push_back(std::accumulate(ep.rewards.begin(), ep.rewards.end(), 0.0));
  }
  return out;
}

Baselines baseline_returns(const AgentTypeSpec& spec, std::size_t n_episodes, std::uint64_t seed) {
  if (n_episodes == 0) throw ContractError("baseline_returns: n_episodes must be at least 1");
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  Baselines out;
  out.j_random = mean(tier_returns(spec, Tier::Random, n_episodes, seed));
  out.j_expert = mean(tier_returns(spec, Tier::Expert, n_episodes, seed));
  if (!(out.j_expert > out.j_random)) {
    throw ContractError("type " + std::to_string(spec.type_id) +
                        ": expert return does not exceed random return");
  }
  return out;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  out.write(kMagic, sizeof(kMagic));
  io::put<std::uint16_t>(out, kVersion);
  io::put<std::uint32_t>(out, ds.type_id);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.d));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.b));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.horizon));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.episodes.size()));
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(ds.tier));
  io::put<std::uint64_t>(out, ds.seed);
  for (const auto& tr : ds.episodes) {
    if (tr.length() != ds.horizon || tr.state_dim() != ds.d || tr.action_dim() != ds.b) {
      throw ShapeError("write_dataset: episode does not match the dataset header");
    }
    for (std::size_t t = 0; t < tr.length(); ++t) {
      for (double v : tr.states.row(t)) io::put_f64(out, v);
      for (double v : tr.actions.row(t)) io::put_f64(out, v);
      io::put_f64(out, tr.rewards[t]);
    }
  }
  if (!out) throw ContractError("write_dataset: stream error");
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ContractError("not an FSDT dataset file");
  }
  const auto version = io::get<std::uint16_t>(in);
  if (version != kVersion) {
    throw ContractError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  ds.type_id = io::get<std::uint32_t>(in);
  ds.d = io::get<std::uint32_t>(in);
  ds.b = io::get<std::uint32_t>(in);
  ds.horizon = io::get<std::uint32_t>(in);
  const std::size_t n = io::get<std::uint32_t>(in);
  const auto tier = io::get<std::uint8_t>(in);
  if (tier > static_cast<std::uint8_t>(Tier::Random)) throw ContractError("bad tier tag");
  ds.tier = static_cast<Tier>(tier);
  ds.seed = io::get<std::uint64_t>(in);
  ds.episodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor states(Shape{ds.horizon, ds.d});
    Tensor actions(Shape{ds.horizon, ds.b});
    std::vector<double> rewards(ds.horizon);
    for (std::size_t t = 0; t < ds.horizon; ++t) {
      for (double& v : states.row(t)) v = io::get_f64(in);
      for (double& v : actions.row(t)) v = io::get_f64(in);
      rewards[t] = io::get_f64(in);
    }
    ds.episodes.push_back(make_trajectory(ds.type_id, ds.tier, i, std::move(states),
                                          std::move(actions), std::move(rewards)));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + path.string());
  return read_dataset(in);
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  auto& types = doc["types"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json t;
    t["type_id"] = e.type_id;
    t["d"] = e.d;
    t["b"] = e.b;
    t["j_random"] = e.baselines.j_random;
    t["j_expert"] = e.baselines.j_expert;
    t["files"] = e.files;
    types.push_back(std::move(t));
  }
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open " + path.string());
  const auto doc = nlohmann::json::parse(in);
  std::vector<ManifestEntry> out;
  for (const auto& t : doc.at("types")) {
    ManifestEntry e;
    e.type_id = t.at("type_id").get<std::uint32_t>();
    e.d = t.at("d").get<std::size_t>();
    e.b = t.at("b").get<std::size_t>();
    e.baselines.j_random = t.at("j_random").get<double>();
    e.baselines.j_expert = t.at("j_expert").get<double>();
    e.files = t.at("files").get<std::map<std::string, std::string>>();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace fsdt
