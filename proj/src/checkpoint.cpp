#include "fsdt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace fsdt {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'D', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_tensors(std::ostream& out, const std::vector<const Parameter*>& params) {
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    io::put_string(out, p->name);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (auto e : p->value.shape()) io::put<std::uint64_t>(out, e);
    for (double v : p->value.data()) io::put_f64(out, v);
  }
}

std::vector<Parameter> get_tensors(std::istream& in) {
  const auto n = io::get<std::uint32_t>(in);
  std::vector<Parameter> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    Parameter p;
    p.name = io::get_string(in);
    const auto rank = io::get<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = io::get<std::uint64_t>(in);
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = io::get_f64(in);
    p.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(p));
  }
  return out;
}

void assign(const std::vector<Parameter*>& dst, const std::vector<Parameter>& src, const char* what) {
  if (dst.size() != src.size()) throw ContractError(std::string("checkpoint: wrong tensor count in ") + what);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i].name || !dst[i]->value.same_shape(src[i].value)) {
      throw ContractError("checkpoint: tensor " + src[i].name + " does not match " + dst[i]->name);
    }
    dst[i]->value = src[i].value;
  }
}


const Parameter& find(const std::vector<Parameter>& ps, const std::string& name) {
  for (const auto& p : ps) {
    if (p.name == name) return p;
  }
  throw ContractError("checkpoint: missing tensor " + name);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Federation& fed) {
  std::vector<std::pair<const char*, std::string>> sections;
  {
    std::ostringstream s;
    io::put_string(s, to_text(fed.config()));
    io::put<std::uint64_t>(s, fed.completed_rounds());
    sections.emplace_back("CONF", s.str());
  }
  {
    std::ostringstream s;
    put_tensors(s, fed.decoder().parameters());
    sections.emplace_back("GDEC", s.str());
  }
  for (const auto& gm : fed.globals()) {
    std::ostringstream s;
    io::put<std::uint32_t>(s, gm.type_id);
    io::put_f64(s, gm.model.E.rtg_scale);
    put_tensors(s, gm.model.parameters());
    sections.emplace_back("TYPE", s.str());
  }
  {
    std::ostringstream s;
    const auto states = fed.rng_states();
    io::put<std::uint32_t>(s, static_cast<std::uint32_t>(states.size()));
    for (const auto& st : states) {
      for (auto w : st) io::put<std::uint64_t>(s, w);
    }
    sections.emplace_back("RNGS", s.str());
  }
  out.write(kMagic, sizeof(kMagic));
  io::put<std::uint32_t>(out, kVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    out.write(tag, 4);
    io::put<std::uint64_t>(out, payload.size());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw ContractError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ContractError("not an FSDT checkpoint");
  }
  const auto version = io::get<std::uint32_t>(in);
  if (version != kVersion) throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const auto n_sections = io::get<std::uint32_t>(in);
  Checkpoint ck;
  bool have_conf = false;
  std::vector<Parameter> decoder_tensors;
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    char tag[4];
    if (!in.read(tag, 4)) throw ContractError("checkpoint truncated");
    const auto len = io::get<std::uint64_t>(in);
    std::string payload(len, '\0');
    if (len && !in.read(payload.data(), static_cast<std::streamsize>(len))) {
      throw ContractError("checkpoint truncated");
    }
    std::istringstream s(payload);
    const std::string t(tag, 4);
    if (t == "CONF") {
      ck.config = parse_config(io::get_string(s), FederationConfig{});
      ck.rounds = io::get<std::uint64_t>(s);
      have_conf = true;
    } else if (t == "GDEC") {
      decoder_tensors = get_tensors(s);
    } else if (t == "TYPE") {
      if (!have_conf) throw ContractError("checkpoint: TYPE section before CONF");
      const auto type_id = io::get<std::uint32_t>(s);
      const double scale = io::get_f64(s);
      const auto tensors = get_tensors(s);
      const Tensor& ws = find(tensors, "E.w_s").value;
      const Tensor& wa = find(tensors, "E.w_a").value;
      const Tensor& om = find(tensors, "E.omega").value;
      GlobalClientModel gm{type_id, make_client_model(type_id, ws.rows(), wa.rows(), ws.cols(),
                                                      om.rows(), scale, 0)};
      assign(gm.model.parameters(), tensors, "TYPE");
      ck.globals.push_back(std::move(gm));
    } else if (t == "RNGS") {
      const auto n = io::get<std::uint32_t>(s);
      for (std::uint32_t j = 0; j < n; ++j) {
        Rng::State st;
        for (auto& w : st) w = io::get<std::uint64_t>(s);
        ck.rng_states.push_back(st);
      }
    } else {
      throw ContractError("checkpoint: unknown section " + t);
    }
  }
  if (!have_conf) throw ContractError("checkpoint: missing CONF section");
  ck.G = ServerDecoder(ck.config.decoder, 0);
  assign(ck.G.parameters(), decoder_tensors, "GDEC");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Federation& fed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, fed);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace fsdt
