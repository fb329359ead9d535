#include "fsdt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace fsdt {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  // from_chars for double is missing from older libstdc++, so use istringstream.
  std::istringstream is{std::string(v)};
  is.imbue(std::locale::classic());
  double out = 0.0;
  is >> out;
  if (!is || !is.eof()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_u64(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

using Setter = std::function<void(FederationConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto size = [&t](const char* key, std::size_t FederationConfig::*field) {
      t[key] = [key, field](FederationConfig& c, std::string_view v) { c.*field = parse_u64(key, v); };
    };
    auto real = [&t](const char* key, double FederationConfig::*field) {
      t[key] = [key, field](FederationConfig& c, std::string_view v) {
        c.*field = parse_double(key, v);
      };
    };
    t["profile"] = [](FederationConfig& c, std::string_view v) { c.profile = std::string(v); };
    t["clients_per_type"] = [](FederationConfig& c, std::string_view v) {
      c.clients_per_type = parse_list("clients_per_type", v);
    };
    size("rounds", &FederationConfig::rounds);
    size("local_steps", &FederationConfig::local_steps);
    size("server_steps", &FederationConfig::server_steps);
    size("batch_size", &FederationConfig::batch_size);
    size("context_length", &FederationConfig::context_length);
    real("client_lr", &FederationConfig::client_lr);
    real("server_lr", &FederationConfig::server_lr);
    real("adam_beta1", &FederationConfig::adam_beta1);
    real("adam_beta2", &FederationConfig::adam_beta2);
    real("adam_eps", &FederationConfig::adam_eps);
    t["seed"] = [](FederationConfig& c, std::string_view v) { c.seed = parse_u64("seed", v); };
    size("episodes_per_client", &FederationConfig::episodes_per_client);
    size("baseline_episodes", &FederationConfig::baseline_episodes);
    size("eval_every", &FederationConfig::eval_every);
    size("eval_episodes", &FederationConfig::eval_episodes);
    t["eval_mode"] = [](FederationConfig& c, std::string_view v) {
      if (v == "mean") c.eval_mode = ActionMode::Mean;
      else if (v == "sample") c.eval_mode = ActionMode::Sample;
      else throw ConfigError("eval_mode: expected mean or sample, got '" + std::string(v) + "'");
    };
    t["wire_bytes"] = [](FederationConfig& c, std::string_view v) {
      c.wire_bytes = static_cast<std::uint32_t>(parse_u64("wire_bytes", v));
    };
    t["width"] = [](FederationConfig& c, std::string_view v) { c.decoder.width = parse_u64("width", v); };
    t["n_layers"] = [](FederationConfig& c, std::string_view v) {
      c.decoder.n_layers = parse_u64("n_layers", v);
    };
    t["n_heads"] = [](FederationConfig& c, std::string_view v) {
      c.decoder.n_heads = parse_u64("n_heads", v);
    };
    t["d_ff"] = [](FederationConfig& c, std::string_view v) { c.decoder.d_ff = parse_u64("d_ff", v); };
    t["ln_eps"] = [](FederationConfig& c, std::string_view v) {
      c.decoder.ln_eps = parse_double("ln_eps", v);
    };
    t["final_norm"] = [](FederationConfig& c, std::string_view v) {
      c.decoder.final_norm = parse_bool("final_norm", v);
    };
    return t;
  }();
  return table;
}

}  // namespace

std::size_t FederationConfig::total_clients() const {
  std::size_t n = 0;
  for (auto k : clients_per_type) n += k;
  return n;
}

FederationConfig full_profile() {
  FederationConfig c;
  c.profile = "full";
  c.clients_per_type = {10, 10, 10};
  c.rounds = 200;
  c.local_steps = 300;
  c.server_steps = 1000;
  c.eval_every = 10;
  return c;
}

FederationConfig desk_profile() { return FederationConfig{}; }

FederationConfig profile_config(std::string_view name) {
  if (name == "full") return full_profile();
  if (name == "desk") return desk_profile();
  throw ConfigError("unknown profile '" + std::string(name) + "'");
}

void validate(const FederationConfig& c) {
  if (c.clients_per_type.empty()) throw ConfigError("clients_per_type: need at least one type");
  for (auto n : c.clients_per_type) {
    if (n < 1) throw ConfigError("clients_per_type: every type needs at least one client");
  }
  auto positive = [](std::size_t v, const char* key) {
    if (v < 1) throw ConfigError(std::string(key) + " must be at least 1");
  };
  positive(c.local_steps, "local_steps");
  positive(c.server_steps, "server_steps");
  positive(c.batch_size, "batch_size");
  positive(c.context_length, "context_length");
  positive(c.episodes_per_client, "episodes_per_client");
  positive(c.baseline_episodes, "baseline_episodes");
  positive(c.eval_episodes, "eval_episodes");
  if (!(c.client_lr >= 0.0) || !(c.server_lr >= 0.0)) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (c.wire_bytes != 4 && c.wire_bytes != 8) throw ConfigError("wire_bytes must be 4 or 8");
  const auto& d = c.decoder;
  if (d.width == 0 || d.n_layers == 0 || d.d_ff == 0 || d.n_heads == 0) {
    throw ConfigError("decoder sizes must be positive");
  }
  if (d.width % d.n_heads != 0) throw ConfigError("width must be divisible by n_heads");
  if (!(d.ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

FederationConfig parse_config(std::string_view text, FederationConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    it->second(base, value);
  }
  validate(base);
  return base;
}

FederationConfig load_config(const std::filesystem::path& path, FederationConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const FederationConfig& c) {
  std::ostringstream os;
  os << "profile = " << c.profile << '\n';
  os << "clients_per_type = ";
  for (std::size_t i = 0; i < c.clients_per_type.size(); ++i) {
    os << (i ? "," : "") << c.clients_per_type[i];
  }
  os << '\n';
  os << "rounds = " << c.rounds << '\n';
  os << "local_steps = " << c.local_steps << '\n';
  os << "server_steps = " << c.server_steps << '\n';
  os << "batch_size = " << c.batch_size << '\n';
  os << "context_length = " << c.context_length << '\n';
  os << "client_lr = " << format_double(c.client_lr) << '\n';
  os << "server_lr = " << format_double(c.server_lr) << '\n';
  os << "adam_beta1 = " << format_double(c.adam_beta1) << '\n';
  os << "adam_beta2 = " << format_double(c.adam_beta2) << '\n';
  os << "adam_eps = " << format_double(c.adam_eps) << '\n';
  os << "seed = " << c.seed << '\n';
  os << "episodes_per_client = " << c.episodes_per_client << '\n';
  os << "baseline_episodes = " << c.baseline_episodes << '\n';
  os << "eval_every = " << c.eval_every << '\n';
  os << "eval_episodes = " << c.eval_episodes << '\n';
  os << "eval_mode = " << (c.eval_mode == ActionMode::Mean ? "mean" : "sample") << '\n';
  os << "wire_bytes = " << c.wire_bytes << '\n';
  os << "width = " << c.decoder.width << '\n';
  os << "n_layers = " << c.decoder.n_layers << '\n';
  os << "n_heads = " << c.decoder.n_heads << '\n';
  os << "d_ff = " << c.decoder.d_ff << '\n';
  os << "ln_eps = " << format_double(c.decoder.ln_eps) << '\n';
  os << "final_norm = " << (c.decoder.final_norm ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace fsdt
