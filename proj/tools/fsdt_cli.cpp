// Command-line front end: data generation, training, evaluation and the
// round / context-length / client-count experiments.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsdt/checkpoint.hpp"
#include "fsdt/config.hpp"
#include "fsdt/dataset.hpp"
#include "fsdt/evaluation.hpp"
#include "fsdt/experiments.hpp"
#include "fsdt/federation.hpp"

namespace fs = std::filesystem;
using namespace fsdt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string profile = "desk";
  std::string out = "out";
};

FederationConfig resolve(const Common& c) {
  FederationConfig cfg = profile_config(c.profile);
  if (!c.config_path.empty()) cfg = load_config(c.config_path, cfg);
  if (c.seed) cfg.seed = *c.seed;
  validate(cfg);
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  out << text;
}

std::vector<TypeData> load_data(const FederationConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return prepare_data(cfg, shipped_specs());
  const auto specs = shipped_specs();
  const auto manifest = load_manifest(fs::path(data_dir) / "manifest.json");
  if (manifest.size() != specs.size()) throw ConfigError("manifest does not cover every agent type");
  std::vector<TypeData> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    TypeData td;
    td.spec = specs[k];
    td.baselines = manifest[k].baselines;
    for (const char* tier : {"expert", "medium", "replay"}) {
      const auto it = manifest[k].files.find(tier);
      if (it == manifest[k].files.end()) throw ConfigError(std::string("manifest lacks tier ") + tier);
      Dataset ds = load_dataset(fs::path(data_dir) / it->second);
      if (ds.type_id != specs[k].type_id || ds.d != specs[k].d || ds.b != specs[k].b) {
        throw ConfigError("dataset " + it->second + " does not match agent type " + std::to_string(k));
      }
      for (auto& tr : ds.episodes) td.dataset.push_back(std::move(tr));
    }
    out.push_back(std::move(td));
  }
  return out;
}

std::string score_line(const RoundMetrics& m) {
  std::ostringstream os;
  os.precision(4);
  os << "round " << m.round;
  if (!m.stage1_loss.empty()) {
    os << "  stage1";
    for (double l : m.stage1_loss) os << ' ' << l;
    os << "  stage2 " << m.stage2_loss;
  }
  if (m.scores) {
    os << "  score";
    for (const auto& s : *m.scores) os << ' ' << s.normalized_score;
  }
  return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

int cmd_gen_data(const Common& c) {
  const FederationConfig cfg = resolve(c);
  const fs::path out = c.out;
  fs::create_directories(out);
  const auto data = prepare_data(cfg, shipped_specs());
  std::vector<ManifestEntry> manifest;
  for (const auto& td : data) {
    ManifestEntry e;
    e.type_id = td.spec.type_id;
    e.d = td.spec.d;
    e.b = td.spec.b;
    e.baselines = td.baselines;
    for (Tier tier : {Tier::Expert, Tier::Medium, Tier::Replay}) {
      Dataset ds{td.spec.type_id, td.spec.d, td.spec.b, td.spec.horizon, tier, cfg.seed, {}};
      for (const auto& tr : td.dataset) {
        if (tr.tier == tier) ds.episodes.push_back(tr);
      }
      const std::string name = "type" + std::to_string(td.spec.type_id) + "_" +
                               std::string(tier_name(tier)) + ".bin";
      save_dataset(out / name, ds);
      e.files[std::string(tier_name(tier))] = name;
    }
    manifest.push_back(std::move(e));
    std::printf("type %u: J_random %.3f  J_expert %.3f\n", td.spec.type_id, td.baselines.j_random,
                td.baselines.j_expert);
  }
  save_manifest(out / "manifest.json", manifest);
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  const FederationConfig cfg = resolve(c);
  const fs::path out = c.out;
  fs::create_directories(out);
  write_file(out / "config.txt", to_text(cfg));
  Federation fed(cfg, load_data(cfg, data_dir));
  std::ofstream jsonl(out / "metrics.jsonl", std::ios::binary);
  const auto start = std::chrono::steady_clock::now();
  const auto metrics = fed.run([&](const RoundMetrics& m) {
    jsonl << to_jsonl(m) << '\n';
    jsonl.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  (%.1fs)\n", score_line(m).c_str(), secs);
    std::fflush(stdout);
  });
  write_file(out / "metrics.csv", metrics_csv(metrics));
  save_checkpoint(out / "checkpoint.bin", fed);
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::size_t episodes) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  FederationConfig cfg = ck.config;
  if (c.seed) cfg.seed = *c.seed;
  const auto specs = shipped_specs();
  if (ck.globals.size() != specs.size()) throw ConfigError("checkpoint does not cover every agent type");
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const Baselines base = baseline_returns(specs[k], cfg.baseline_episodes,
                                            baseline_seed(cfg.seed, k));
    EvalConfig ev;
    ev.target_return = base.j_expert;
    ev.episodes = episodes ? episodes : cfg.eval_episodes;
    ev.h = cfg.context_length;
    ev.mode = cfg.eval_mode;
    ev.seed = eval_seed(cfg.seed, k);
    const ScoreReport r = evaluate(specs[k], base, ck.globals[k].model, ck.G, ev);
    std::printf("type %u: return %.3f ± %.3f  normalized %.2f\n", r.type_id, r.mean_return,
                r.std_return, r.normalized_score);
    report.push_back({{"type_id", r.type_id},
                      {"mean_return", r.mean_return},
                      {"std_return", r.std_return},
                      {"normalized_score", r.normalized_score}});
  }
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "eval.json", report.dump(2) + "\n");
  return kExitOk;
}

void progress(const std::string& msg) {
  std::printf("%s\n", msg.c_str());
  std::fflush(stdout);
}

int cmd_exp_rounds(const Common& c) {
  const FederationConfig cfg = resolve(c);
  fs::create_directories(c.out);
  const RoundsSeries series = experiment_rounds(cfg, shipped_specs(), progress);
  std::ofstream jsonl(fs::path(c.out) / "metrics.jsonl", std::ios::binary);
  for (const auto& m : series.metrics) jsonl << to_jsonl(m) << '\n';
  write_file(fs::path(c.out) / "rounds.csv", rounds_csv(series));
  std::fputs(rounds_csv(series).c_str(), stdout);
  return kExitOk;
}

int cmd_exp_context(const Common& c, const std::string& hs) {
  const FederationConfig cfg = resolve(c);
  fs::create_directories(c.out);
  const auto rows = experiment_context_length(cfg, shipped_specs(), parse_sizes(hs), progress);
  write_file(fs::path(c.out) / "context.csv", context_csv(rows));
  std::fputs(context_csv(rows).c_str(), stdout);
  return kExitOk;
}

int cmd_exp_clients(const Common& c, const std::string& ns) {
  const FederationConfig cfg = resolve(c);
  fs::create_directories(c.out);
  const auto rows = experiment_clients(cfg, shipped_specs(), parse_sizes(ns), progress);
  write_file(fs::path(c.out) / "clients.csv", clients_csv(rows));
  std::fputs(clients_csv(rows).c_str(), stdout);
  return kExitOk;
}

int cmd_report(const Common& c, const std::string& metrics_path) {
  std::ifstream in(metrics_path);
  if (!in) throw ConfigError("cannot open " + metrics_path);
  std::vector<RoundMetrics> metrics;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) metrics.push_back(metrics_from_jsonl(line));
  }
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "metrics.csv", metrics_csv(metrics));
  std::fputs(metrics_csv(metrics).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated split-learning simulator for return-conditioned control policies"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "run seed");
  app.add_option("--profile", common.profile, "base profile")
      ->check(CLI::IsMember({"full", "desk"}));
  app.add_option("--out", common.out, "output directory");

  std::string data_dir, checkpoint, hs = "5,10", ns = "3,6,9", metrics_path;
  std::size_t episodes = 0;
  auto* gen = app.add_subcommand("gen-data", "write per-tier datasets and a manifest");
  auto* train = app.add_subcommand("train", "run federated training");
  train->add_option("--data", data_dir, "directory written by gen-data (default: generate in memory)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "episodes per type (default: from the checkpoint config)");
  auto* rounds = app.add_subcommand("exp-rounds", "score against communication rounds");
  auto* context = app.add_subcommand("exp-context", "score and bytes against context length");
  context->add_option("--lengths", hs, "comma-separated context lengths");
  auto* clients = app.add_subcommand("exp-clients", "score against client count");
  clients->add_option("--counts", ns, "comma-separated total client counts");
  auto* report = app.add_subcommand("report", "render metrics.jsonl as CSV");
  report->add_option("--metrics", metrics_path, "metrics.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (train->parsed()) return cmd_train(common, data_dir);
    if (eval->parsed()) return cmd_eval(common, checkpoint, episodes);
    if (rounds->parsed()) return cmd_exp_rounds(common);
    if (context->parsed()) return cmd_exp_context(common, hs);
    if (clients->parsed()) return cmd_exp_clients(common, ns);
    if (report->parsed()) return cmd_report(common, metrics_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
