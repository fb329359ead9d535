#include "fsdt/experiments.hpp"

#include <sstream>

namespace fsdt {

namespace {

std::vector<double> normalized(const std::vector<ScoreReport>& reports) {
  std::vector<double> out;
  for (const auto& r : reports) out.push_back(r.normalized_score);
  return out;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Scores of the last evaluated record.
std::vector<double> final_scores(const std::vector<RoundMetrics>& metrics) {
  for (auto it = metrics.rbegin(); it != metrics.rend(); ++it) {
    if (it->scores) return normalized(*it->scores);
  }
  return {};
}

void note(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

}  // namespace

RoundsSeries experiment_rounds(const FederationConfig& config, const std::vector<AgentTypeSpec>& specs,
                               const ProgressFn& progress) {
  Federation fed(config, prepare_data(config, specs));
  RoundsSeries series;
  series.metrics = fed.run([&](const RoundMetrics& m) {
    note(progress, "round " + std::to_string(m.round) + " done");
  });
  for (const auto& m : series.metrics) {
    if (m.scores) series.points.push_back({m.round, normalized(*m.scores)});
  }
  return series;
}

std::vector<ContextRow> experiment_context_length(const FederationConfig& config,
                                                  const std::vector<AgentTypeSpec>& specs,
                                                  const std::vector<std::size_t>& h_values,
                                                  const ProgressFn& progress) {
  std::vector<ContextRow> rows;
  for (std::size_t h : h_values) {
    if (h == 0) throw ConfigError("context length must be at least 1");
    FederationConfig c = config;
    c.context_length = h;
    Federation fed(c, prepare_data(c, specs));
    const auto metrics = fed.run();
    ContextRow row;
    row.h = h;
    row.scores = final_scores(metrics);
    row.mean_score = mean(row.scores);
    const ByteCounts bytes = fed.ledger().cumulative();
    row.activation_bytes = bytes[static_cast<std::size_t>(MessageClass::ActivationsUp)];
    row.total_bytes = total(bytes);
    rows.push_back(row);
    note(progress, "h=" + std::to_string(h) + " done");
  }
  return rows;
}

std::vector<ClientsRow> experiment_clients(const FederationConfig& config,
                                           const std::vector<AgentTypeSpec>& specs,
                                           const std::vector<std::size_t>& n_values,
                                           const ProgressFn& progress) {
  const std::size_t K = specs.size();
  std::vector<ClientsRow> rows;
  for (std::size_t n : n_values) {
    if (n == 0 || n % K != 0) {
      throw ConfigError("client count " + std::to_string(n) + " is not a positive multiple of " +
                        std::to_string(K));
    }
    FederationConfig c = config;
    c.clients_per_type.assign(K, n / K);
    Federation fed(c, prepare_data(c, specs));
    const auto metrics = fed.run();
    ClientsRow row;
    row.n = n;
    row.clients_per_type = c.clients_per_type;
    row.scores = final_scores(metrics);
    row.mean_score = mean(row.scores);
    rows.push_back(row);
    note(progress, "n=" + std::to_string(n) + " done");
  }
  return rows;
}

std::string context_csv(const std::vector<ContextRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  std::size_t K = rows.empty() ? 0 : rows.front().scores.size();
  os << "h";
  for (std::size_t k = 0; k < K; ++k) os << ",score_" << k;
  os << ",mean_score,activation_bytes,total_bytes\n";
  for (const auto& r : rows) {
    os << r.h;
    for (double s : r.scores) os << ',' << s;
    os << ',' << r.mean_score << ',' << r.activation_bytes << ',' << r.total_bytes << '\n';
  }
  return os.str();
}

std::string clients_csv(const std::vector<ClientsRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  std::size_t K = rows.empty() ? 0 : rows.front().scores.size();
  os << "n,clients_per_type";
  for (std::size_t k = 0; k < K; ++k) os << ",score_" << k;
  os << ",mean_score\n";
  for (const auto& r : rows) {
    os << r.n << ',';
    for (std::size_t i = 0; i < r.clients_per_type.size(); ++i) {
      os << (i ? "/" : "") << r.clients_per_type[i];
    }
    for (double s : r.scores) os << ',' << s;
    os << ',' << r.mean_score << '\n';
  }
  return os.str();
}

std::string rounds_csv(const RoundsSeries& series) {
  std::ostringstream os;
  os.precision(10);
  std::size_t K = series.points.empty() ? 0 : series.points.front().scores.size();
  os << "round";
  for (std::size_t k = 0; k < K; ++k) os << ",score_" << k;
  os << ",mean_score\n";
  for (const auto& p : series.points) {
    os << p.round;
    for (double s : p.scores) os << ',' << s;
    os << ',' << mean(p.scores) << '\n';
  }
  return os.str();
}

}  // namespace fsdt
