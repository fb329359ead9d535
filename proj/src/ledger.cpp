#include "fsdt/ledger.hpp"

#include "fsdt/tensor.hpp"

namespace fsdt {

std::string_view message_class_name(MessageClass c) {
  switch (c) {
    case MessageClass::ActivationsUp: return "activations_up";
    case MessageClass::OutputsDown: return "outputs_down";
    case MessageClass::TokenGradsUp: return "token_grads_up";
    case MessageClass::InputGradsDown: return "input_grads_down";
    case MessageClass::ParamsDown: return "params_down";
    case MessageClass::ParamsUp: return "params_up";
  }
  return "unknown";
}

std::uint64_t total(const ByteCounts& counts) {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ChannelLedger::ChannelLedger(std::uint32_t wire_bytes) : wire_bytes_(wire_bytes) {
  if (wire_bytes != 4 && wire_bytes != 8) {
    throw ContractError("ledger: wire scalars must be 4 or 8 bytes");
  }
}

void ChannelLedger::record(MessageClass c, std::uint64_t scalars) {
  current_[static_cast<std::size_t>(c)] += scalars * wire_bytes_;
}

void ChannelLedger::merge(const ChannelLedger& other) {
  if (other.wire_bytes_ != wire_bytes_) throw ContractError("ledger: wire size mismatch in merge");
  for (std::size_t i = 0; i < kMessageClasses; ++i) current_[i] += other.current_[i];
}

ByteCounts ChannelLedger::end_round() {
  const ByteCounts closed = current_;
  rounds_.push_back(closed);
  current_ = {};
  return closed;
}

ByteCounts ChannelLedger::cumulative() const {
  ByteCounts sum{};
  for (const auto& r : rounds_) {
    for (std::size_t i = 0; i < kMessageClasses; ++i) sum[i] += r[i];
  }
  for (std::size_t i = 0; i < kMessageClasses; ++i) sum[i] += current_[i];
  return sum;
}

}  // namespace fsdt
