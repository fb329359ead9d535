#ifndef FSDT_DATASET_HPP_
#define FSDT_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fsdt/env.hpp"
#include "fsdt/trajectory.hpp"

namespace fsdt {

/// Episodes of one agent type and one behaviour tier.
struct Dataset {
  std::uint32_t type_id = 0;
  std::size_t d = 0;
  std::size_t b = 0;
  std::size_t horizon = 0;
  Tier tier = Tier::Expert;
  std::uint64_t seed = 0;
  std::vector<Trajectory> episodes;
};

/// Episode i is rolled out with its own generator seeded by derive_seed(seed, i).
Dataset generate_dataset(const AgentTypeSpec& spec, Tier tier, std::size_t n_episodes,
                         std::uint64_t seed);

/// Undiscounted returns of n episodes under a tier's behaviour policy, with
/// the same per-episode seeding as generate_dataset.
std::vector<double> tier_returns(const AgentTypeSpec& spec, Tier tier, std::size_t n_episodes,
                                 std::uint64_t seed);

struct Baselines {
  double j_random = 0.0;
  double j_expert = 0.0;
};

/// Mean random-policy and LQR-policy returns. Throws ContractError when the
/// expert does not beat the random policy.
Baselines baseline_returns(const AgentTypeSpec& spec, std::size_t n_episodes, std::uint64_t seed);

/// Little-endian binary format: "FSDT", u16 version, u32 type_id, u32 d,
/// u32 b, u32 T, u32 n_episodes, u8 tier, u64 seed, then f64 (s, a, r) per
/// timestep.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

/// Dataset files of one agent type plus its normalization endpoints.
struct ManifestEntry {
  std::uint32_t type_id = 0;
  std::size_t d = 0;
  std::size_t b = 0;
  Baselines baselines;
  std::map<std::string, std::string> files;  // tier name -> path relative to the manifest
};

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

}  // namespace fsdt

#endif  // FSDT_DATASET_HPP_
