#ifndef FSDT_CONFIG_HPP_
#define FSDT_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fsdt/client_model.hpp"
#include "fsdt/server_decoder.hpp"

namespace fsdt {

/// Bad configuration: unknown key, malformed value, or violated invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FederationConfig {
  std::string profile = "desk";
  std::vector<std::size_t> clients_per_type = {2, 2, 2};
  std::size_t rounds = 20;
  std::size_t local_steps = 50;
  std::size_t server_steps = 100;
  std::size_t batch_size = 8;
  std::size_t context_length = 5;
  double client_lr = 1e-4;
  double server_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  /// Episodes per tier generated for each client of a type.
  std::size_t episodes_per_client = 50;
  std::size_t baseline_episodes = 200;
  /// 0 disables evaluation. Otherwise rounds 0, 1, every multiple and the
  /// last round are evaluated.
  std::size_t eval_every = 5;
  std::size_t eval_episodes = 20;
  ActionMode eval_mode = ActionMode::Mean;
  std::uint32_t wire_bytes = 8;
  DecoderConfig decoder;

  std::size_t total_clients() const;
};

FederationConfig full_profile();
FederationConfig desk_profile();
/// "full" or "desk"; anything else is a ConfigError.
FederationConfig profile_config(std::string_view name);

/// Throws ConfigError on the first violated invariant.
void validate(const FederationConfig& config);

/// Applies flat `key = value` lines on top of `base`. Blank lines and lines
/// starting with '#' are skipped. Unknown keys are an error.
FederationConfig parse_config(std::string_view text, FederationConfig base);
FederationConfig load_config(const std::filesystem::path& path, FederationConfig base);

/// Every field as `key = value` lines, in a fixed order; parse_config reads it
/// back to an equal config.
std::string to_text(const FederationConfig& config);

}  // namespace fsdt

#endif  // FSDT_CONFIG_HPP_
