#ifndef FSDT_EXPERIMENTS_HPP_
#define FSDT_EXPERIMENTS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsdt/config.hpp"
#include "fsdt/env.hpp"
#include "fsdt/federation.hpp"

namespace fsdt {

using ProgressFn = std::function<void(const std::string&)>;

struct ScorePoint {
  std::size_t round = 0;
  std::vector<double> scores;  // normalized, per type
};

struct RoundsSeries {
  std::vector<RoundMetrics> metrics;
  std::vector<ScorePoint> points;  // one per evaluated round
};

/// Score-vs-round series of one training run.
RoundsSeries experiment_rounds(const FederationConfig& config, const std::vector<AgentTypeSpec>& specs,
                               const ProgressFn& progress = {});

struct ContextRow {
  std::size_t h = 0;
  std::vector<double> scores;  // final evaluation, per type
  double mean_score = 0.0;
  std::uint64_t activation_bytes = 0;  // whole run
  std::uint64_t total_bytes = 0;
};

/// One full run per context length with otherwise identical config and seeds.
std::vector<ContextRow> experiment_context_length(const FederationConfig& config,
                                                  const std::vector<AgentTypeSpec>& specs,
                                                  const std::vector<std::size_t>& h_values,
                                                  const ProgressFn& progress = {});

struct ClientsRow {
  std::size_t n = 0;
  std::vector<std::size_t> clients_per_type;
  std::vector<double> scores;
  double mean_score = 0.0;
};

/// One run per total client count, split evenly over types, with fixed data
/// per client. Every n must be a positive multiple of the type count.
std::vector<ClientsRow> experiment_clients(const FederationConfig& config,
                                           const std::vector<AgentTypeSpec>& specs,
                                           const std::vector<std::size_t>& n_values,
                                           const ProgressFn& progress = {});

std::string context_csv(const std::vector<ContextRow>& rows);
std::string clients_csv(const std::vector<ClientsRow>& rows);
std::string rounds_csv(const RoundsSeries& series);

}  // namespace fsdt

#endif  // FSDT_EXPERIMENTS_HPP_
