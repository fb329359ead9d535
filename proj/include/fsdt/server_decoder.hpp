#ifndef FSDT_SERVER_DECODER_HPP_
#define FSDT_SERVER_DECODER_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fsdt/autograd.hpp"

namespace fsdt {

struct DecoderConfig {
  std::size_t width = 128;
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  double ln_eps = 1e-5;
  bool final_norm = true;
};

/// Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct DecoderBlock {
  Parameter ln1_g, ln1_b;
  Parameter w_qkv, b_qkv;  // D×3D, 3D
  Parameter w_o, b_o;      // D×D, D
  Parameter ln2_g, ln2_b;
  Parameter w_1, b_1;      // D×D_ff, D_ff
  Parameter w_2, b_2;      // D_ff×D, D
};

/// Causal decoder stack with no input embedding and no output head.
class ServerDecoder {
 public:
  ServerDecoder() = default;
  ServerDecoder(const DecoderConfig& config, std::uint64_t seed);
  ServerDecoder(const ServerDecoder&) = delete;
  ServerDecoder& operator=(const ServerDecoder&) = delete;
  ServerDecoder(ServerDecoder&&) = default;
  ServerDecoder& operator=(ServerDecoder&&) = default;

  const DecoderConfig& config() const { return config_; }
  const std::vector<DecoderBlock>& blocks() const { return blocks_; }
  std::vector<DecoderBlock>& blocks() { return blocks_; }
  const Parameter& final_gamma() const { return lnf_g_; }
  const Parameter& final_beta() const { return lnf_b_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void set_frozen(bool frozen);
  bool frozen() const;
  std::uint64_t hash() const;

  /// n_layers·(4D² + 2·D·D_ff + D_ff + 9D) + 2D for the final norm when enabled.
  static std::size_t expected_parameter_count(const DecoderConfig& config);

 private:
  DecoderConfig config_;
  std::vector<DecoderBlock> blocks_;
  Parameter lnf_g_, lnf_b_;
};

/// Decoder output for tokens (n·L)×D holding n sequences of length seq_len.
/// Rows with mask 0 are excluded as attention keys and zeroed at the output.
Var decode(Graph& g, const ServerDecoder& G, Var tokens, const std::vector<std::uint8_t>& mask,
           std::size_t seq_len);

Tensor decode(const ServerDecoder& G, const Tensor& tokens, const std::vector<std::uint8_t>& mask,
              std::size_t seq_len);

}  // namespace fsdt

#endif  // FSDT_SERVER_DECODER_HPP_
