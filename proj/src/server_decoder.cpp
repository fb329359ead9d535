#include "fsdt/server_decoder.hpp"

#include "fsdt/client_model.hpp"

namespace fsdt {

namespace {

Parameter make(std::string name, Shape shape, double fill = 0.0) {
  return Parameter{std::move(name), Tensor::filled(std::move(shape), fill)};
}

}  // namespace

ServerDecoder::ServerDecoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
  const std::size_t D = config.width;
  if (D == 0 || config.n_layers == 0 || config.d_ff == 0) {
    throw ContractError("decoder: sizes must be positive");
  }
  if (config.n_heads == 0 || D % config.n_heads != 0) {
    throw ShapeError("decoder: width " + std::to_string(D) + " not divisible by " +
                     std::to_string(config.n_heads) + " heads");
  }
  std::uint64_t index = 0;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "G.block" + std::to_string(l) + ".";
    DecoderBlock blk;
    blk.ln1_g = make(p + "ln1_g", {D}, 1.0);
    blk.ln1_b = make(p + "ln1_b", {D});
    blk.w_qkv = make(p + "w_qkv", {D, 3 * D});
    blk.b_qkv = make(p + "b_qkv", {3 * D});
    blk.w_o = make(p + "w_o", {D, D});
    blk.b_o = make(p + "b_o", {D});
    blk.ln2_g = make(p + "ln2_g", {D}, 1.0);
    blk.ln2_b = make(p + "ln2_b", {D});
    blk.w_1 = make(p + "w_1", {D, config.d_ff});
    blk.b_1 = make(p + "b_1", {config.d_ff});
    blk.w_2 = make(p + "w_2", {config.d_ff, D});
    blk.b_2 = make(p + "b_2", {D});
    init_uniform(blk.w_qkv, D, derive_seed(seed, index++));
    init_uniform(blk.w_o, D, derive_seed(seed, index++));
    init_uniform(blk.w_1, D, derive_seed(seed, index++));
    init_uniform(blk.w_2, config.d_ff, derive_seed(seed, index++));
    blocks_.push_back(std::move(blk));
  }
  lnf_g_ = make("G.lnf_g", {D}, 1.0);
  lnf_b_ = make("G.lnf_b", {D});
}

std::vector<Parameter*> ServerDecoder::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks_) {
    for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_o, &b.b_o, &b.ln2_g,
                         &b.ln2_b, &b.w_1, &b.b_1, &b.w_2, &b.b_2}) {
      out.push_back(p);
    }
  }
  if (config_.final_norm) {
    out.push_back(&lnf_g_);
    out.push_back(&lnf_b_);
  }
  return out;
}

std::vector<const Parameter*> ServerDecoder::parameters() const {
  auto mut = const_cast<ServerDecoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t ServerDecoder::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void ServerDecoder::set_frozen(bool frozen) {
  for (Parameter* p : parameters()) p->frozen = frozen;
}

bool ServerDecoder::frozen() const {
  for (const Parameter* p : parameters()) {
    if (!p->frozen) return false;
  }
  return true;
}

std::uint64_t ServerDecoder::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const Parameter* p : parameters()) h = hash_bytes(p->value.data(), h);
  return h;
}

std::size_t ServerDecoder::expected_parameter_count(const DecoderConfig& c) {
  const std::size_t D = c.width;
  return c.n_layers * (4 * D * D + 2 * D * c.d_ff + c.d_ff + 9 * D) + (c.final_norm ? 2 * D : 0);
}

Var decode(Graph& g, const ServerDecoder& G, Var tokens, const std::vector<std::uint8_t>& mask,
           std::size_t seq_len) {
  const DecoderConfig& c = G.config();
  const Tensor& in = g.value(tokens);
  if (in.rank() != 2 || in.cols() != c.width) {
    throw ShapeError("decode: tokens " + shape_string(in.shape()) + " for width " +
                     std::to_string(c.width));
  }
  if (seq_len == 0 || seq_len % 3 != 0) {
    throw ShapeError("decode: sequence length " + std::to_string(seq_len) +
                     " is not a positive multiple of 3");
  }
  if (mask.size() != in.rows()) throw ShapeError("decode: mask length does not match tokens");
  Var x = tokens;
  for (const DecoderBlock& b : G.blocks()) {
    const Var h1 = g.layer_norm(x, g.parameter(b.ln1_g), g.parameter(b.ln1_b), c.ln_eps);
    const Var qkv = g.add_bias(g.matmul(h1, g.parameter(b.w_qkv)), g.parameter(b.b_qkv));
    const Var att = g.causal_attention(qkv, mask, c.n_heads, seq_len);
    x = g.add(x, g.add_bias(g.matmul(att, g.parameter(b.w_o)), g.parameter(b.b_o)));
    const Var h2 = g.layer_norm(x, g.parameter(b.ln2_g), g.parameter(b.ln2_b), c.ln_eps);
    const Var f = g.gelu(g.add_bias(g.matmul(h2, g.parameter(b.w_1)), g.parameter(b.b_1)));
    x = g.add(x, g.add_bias(g.matmul(f, g.parameter(b.w_2)), g.parameter(b.b_2)));
  }
  if (c.final_norm) {
    x = g.layer_norm(x, g.parameter(G.final_gamma()), g.parameter(G.final_beta()), c.ln_eps);
  }
  return g.mask_rows(x, mask);
}

Tensor decode(const ServerDecoder& G, const Tensor& tokens, const std::vector<std::uint8_t>& mask,
              std::size_t seq_len) {
  Graph g;
  return g.value(decode(g, G, g.constant(tokens), mask, seq_len));
}

}  // namespace fsdt
