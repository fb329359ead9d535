#ifndef FSDT_CHECKPOINT_HPP_
#define FSDT_CHECKPOINT_HPP_

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "fsdt/config.hpp"
#include "fsdt/federation.hpp"
#include "fsdt/server_decoder.hpp"

namespace fsdt {

/// Sectioned binary file: magic "FSDTCKPT", u32 version, u32 section count,
/// then sections {4-byte tag, u64 length, payload}. Tags: CONF (config echo
/// and completed rounds), GDEC (decoder tensors), TYPE (one per agent type:
/// type id, returns-to-go scale, E and P tensors), RNGS (generator states).
struct Checkpoint {
  FederationConfig config;
  std::size_t rounds = 0;
  ServerDecoder G;
  std::vector<GlobalClientModel> globals;
  std::vector<Rng::State> rng_states;
};

void write_checkpoint(std::ostream& out, const Federation& fed);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Federation& fed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsdt

#endif  // FSDT_CHECKPOINT_HPP_
