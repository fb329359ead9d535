#ifndef FSDT_LEDGER_HPP_
#define FSDT_LEDGER_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fsdt {

enum class MessageClass : std::size_t {
  ActivationsUp = 0,
  OutputsDown,
  TokenGradsUp,
  InputGradsDown,
  ParamsDown,
  ParamsUp,
};

inline constexpr std::size_t kMessageClasses = 6;

std::string_view message_class_name(MessageClass c);

using ByteCounts = std::array<std::uint64_t, kMessageClasses>;

std::uint64_t total(const ByteCounts& counts);

/// Byte counters for simulated client-server traffic. Every message is
/// charged scalar_count × wire_bytes; compute always runs in 64-bit.
class ChannelLedger {
 public:
  explicit ChannelLedger(std::uint32_t wire_bytes = 8);

  std::uint32_t wire_bytes() const { return wire_bytes_; }
  void record(MessageClass c, std::uint64_t scalars);
  /// Adds another ledger's open-round counters (used to merge per-client
  /// ledgers in client order).
  void merge(const ChannelLedger& other);

  const ByteCounts& current() const { return current_; }
  /// Closes the round, appending its counters to the history.
  ByteCounts end_round();
  const std::vector<ByteCounts>& rounds() const { return rounds_; }
  ByteCounts cumulative() const;

 private:
  std::uint32_t wire_bytes_;
  ByteCounts current_{};
  std::vector<ByteCounts> rounds_;
};

}  // namespace fsdt

#endif  // FSDT_LEDGER_HPP_
