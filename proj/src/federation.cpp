#include "fsdt/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fsdt {

namespace {

// Stream indices under config.seed. Every consumer draws from its own stream
// so adding a client or a type never shifts another component's randomness.
constexpr std::uint64_t kStreamDecoder = 1;
constexpr std::uint64_t kStreamServerSampler = 2;
constexpr std::uint64_t kStreamData = 100;
constexpr std::uint64_t kStreamBaseline = 200;
constexpr std::uint64_t kStreamPartition = 300;
constexpr std::uint64_t kStreamGlobalInit = 400;
constexpr std::uint64_t kStreamEval = 500;
constexpr std::uint64_t kStreamClientSampler = 1000;

std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
  std::vector<const Tensor*> out;
  out.reserve(v.size());
  for (const auto& t : v) out.push_back(&t);
  return out;
}

Tensor grad_or_zero(const Graph& g, const Parameter& p) {
  const Tensor* gr = g.parameter_grad(p);
  return gr ? *gr : Tensor(p.value.shape());
}

}  // namespace

std::vector<TypeData> prepare_data(const FederationConfig& config,
                                   const std::vector<AgentTypeSpec>& specs) {
  if (specs.size() != config.clients_per_type.size()) {
    throw ConfigError("config declares " + std::to_string(config.clients_per_type.size()) +
                      " agent types but " + std::to_string(specs.size()) + " are available");
  }
  std::vector<TypeData> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    TypeData td;
    td.spec = specs[k];
    td.baselines = baseline_returns(specs[k], config.baseline_episodes,
                                    baseline_seed(config.seed, k));
    const std::size_t n = config.episodes_per_client * config.clients_per_type[k];
    const std::uint64_t type_seed = derive_seed(config.seed, kStreamData + k);
    for (Tier tier : {Tier::Expert, Tier::Medium, Tier::Replay}) {
      Dataset ds = generate_dataset(specs[k], tier, n,
                                    derive_seed(type_seed, static_cast<std::uint64_t>(tier)));
      for (auto& tr : ds.episodes) td.dataset.push_back(std::move(tr));
    }
    out.push_back(std::move(td));
  }
  return out;
}

std::uint64_t baseline_seed(std::uint64_t seed, std::size_t type_index) {
  return derive_seed(seed, kStreamBaseline + type_index);
}

std::uint64_t eval_seed(std::uint64_t seed, std::size_t type_index) {
  return derive_seed(seed, kStreamEval + type_index);
}

double rtg_scale(const Baselines& baselines) { return baselines.j_expert - baselines.j_random; }

SplitStep split_step(const ClientModel& client, const ServerDecoder& G,
                     const std::vector<ContextWindow>& batch, Stage stage, ChannelLedger* ledger) {
  if (batch.empty()) throw ContractError("split_step: empty batch");
  auto charge = [&](MessageClass c, const Tensor& t) {
    if (ledger) ledger->record(c, t.size());
  };
  SplitStep out;

  // Client: embed and send the tokens up.
  Graph client_graph;
  std::vector<std::uint8_t> mask;
  const Var tokens = embed(client_graph, client.E, batch, &mask);
  out.tokens = client_graph.value(tokens);
  charge(MessageClass::ActivationsUp, out.tokens);

  // Server: decode and send the outputs down.
  Graph server_graph;
  const Var server_in = server_graph.input(out.tokens);
  const Var server_out = decode(server_graph, G, server_in, mask, 3 * batch.front().h);
  out.outputs = server_graph.value(server_out);
  charge(MessageClass::OutputsDown, out.outputs);

  // Client: head, loss, and the gradient of the loss w.r.t. the outputs.
  Graph head_graph;
  const Var head_in = head_graph.input(out.outputs);
  const Var loss = action_loss(head_graph, client.P, head_in, batch);
  out.loss = head_graph.value(loss).item();
  if (!std::isfinite(out.loss)) throw NumericError("split_step: non-finite loss");
  head_graph.backward(loss);
  out.token_grads = head_graph.grad(head_in);
  charge(MessageClass::TokenGradsUp, out.token_grads);

  // Server: backward through the decoder, return the input gradient.
  server_graph.backward(server_out, out.token_grads);
  out.input_grads = server_graph.grad(server_in);
  charge(MessageClass::InputGradsDown, out.input_grads);

  if (stage == Stage::One) {
    client_graph.backward(tokens, out.input_grads);
    for (const Parameter* p : client.parameters()) {
      const Graph& owner = client_graph.parameter_grad(*p) ? client_graph : head_graph;
      out.client_grads.push_back(grad_or_zero(owner, *p));
    }
  } else {
    for (const Parameter* p : G.parameters()) out.server_grads.push_back(grad_or_zero(server_graph, *p));
  }
  return out;
}

double local_update(ClientHandle& client, const ServerDecoder& G, std::size_t steps,
                    std::size_t batch_size, std::size_t h, ChannelLedger& ledger) {
  if (!G.frozen()) throw ContractError("local_update: decoder must be frozen during stage one");
  if (client.shard.type_id != client.model.type_id || client.type_id != client.model.type_id) {
    throw ContractError("local_update: shard type does not match the client model");
  }
  const std::vector<Parameter*> params = client.model.parameters();
  double loss_sum = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto batch = sample_batch(client.shard, batch_size, h, client.rng);
    const SplitStep r = split_step(client.model, G, batch, Stage::One, &ledger);
    for (const Tensor& gr : r.client_grads) gr.check_finite("client gradient");
    client.optimizer.step(params, pointers(r.client_grads));
    loss_sum += r.loss;
  }
  return steps ? loss_sum / static_cast<double>(steps) : 0.0;
}

GlobalClientModel aggregate_type(const std::vector<const ClientModel*>& clients) {
  if (clients.empty()) throw ContractError("aggregate_type: no clients");
  const std::uint32_t type_id = clients.front()->type_id;
  for (const ClientModel* c : clients) {
    if (c->type_id != type_id) throw ContractError("aggregate_type: clients of different types");
  }
  GlobalClientModel global{type_id, *clients.front()};
  const std::vector<Parameter*> out = global.model.parameters();
  std::vector<std::vector<const Parameter*>> src;
  for (const ClientModel* c : clients) src.push_back(c->parameters());
  const double n = static_cast<double>(clients.size());
  std::vector<double> values(clients.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (const auto& s : src) {
      if (!s[p]->value.same_shape(out[p]->value)) {
        throw ShapeError("aggregate_type: parameter " + out[p]->name + " differs in shape");
      }
    }
    for (std::size_t j = 0; j < out[p]->value.size(); ++j) {
      for (std::size_t c = 0; c < src.size(); ++c) values[c] = src[c][p]->value[j];
      std::sort(values.begin(), values.end());
      // Offsets from the smallest value: exact for identical inputs.
      double acc = 0.0;
      for (double v : values) acc += v - values.front();
      out[p]->value[j] = values.front() + acc / n;
    }
  }
  global.model.set_frozen(false);
  return global;
}

void distribute_type(const GlobalClientModel& global, const std::vector<ClientHandle*>& clients,
                     ChannelLedger& ledger) {
  const std::vector<const Parameter*> src = global.model.parameters();
  for (ClientHandle* c : clients) {
    if (c->type_id != global.type_id || c->model.type_id != global.type_id) {
      throw ContractError("distribute_type: client " + std::to_string(c->id) +
                          " is not of type " + std::to_string(global.type_id));
    }
    const std::vector<Parameter*> dst = c->model.parameters();
    for (std::size_t p = 0; p < dst.size(); ++p) {
      if (!dst[p]->value.same_shape(src[p]->value)) {
        throw ShapeError("distribute_type: parameter " + dst[p]->name + " differs in shape");
      }
      dst[p]->value = src[p]->value;
    }
    c->model.E.rtg_scale = global.model.E.rtg_scale;
    c->optimizer.reset();
    ledger.record(MessageClass::ParamsDown, global.model.parameter_count());
  }
}

double train_server(ServerDecoder& G, Adam& optimizer, const std::vector<GlobalClientModel>& globals,
                    const std::vector<std::vector<const ClientShard*>>& shards, std::size_t steps,
                    std::size_t batch_size, std::size_t h, Rng& rng, ChannelLedger& ledger) {
  if (globals.empty() || globals.size() != shards.size()) {
    throw ContractError("train_server: need one shard list per global model");
  }
  for (const auto& gm : globals) {
    for (const Parameter* p : gm.model.parameters()) {
      if (!p->frozen) throw ContractError("train_server: client models must be frozen during stage two");
    }
  }
  for (const auto& list : shards) {
    if (list.empty()) throw ContractError("train_server: a type has no shards");
  }
  for (const Parameter* p : std::as_const(G).parameters()) {
    if (p->frozen) throw ContractError("train_server: decoder is frozen");
  }
  const std::vector<Parameter*> params = G.parameters();
  const std::size_t K = globals.size();
  double loss_sum = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t k = s % K;
    const ClientShard& shard = *shards[k][(s / K) % shards[k].size()];
    const auto batch = sample_batch(shard, batch_size, h, rng);
    const SplitStep r = split_step(globals[k].model, G, batch, Stage::Two, &ledger);
    for (const Tensor& gr : r.server_grads) gr.check_finite("server gradient");
    optimizer.step(params, pointers(r.server_grads));
    loss_sum += r.loss;
  }
  return steps ? loss_sum / static_cast<double>(steps) : 0.0;
}

std::string to_jsonl(const RoundMetrics& m) {
  nlohmann::ordered_json j;
  j["round"] = m.round;
  j["stage1_loss"] = m.stage1_loss;
  j["stage2_loss"] = m.stage2_loss;
  if (m.scores) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : *m.scores) {
      nlohmann::ordered_json e;
      e["type_id"] = s.type_id;
      e["mean_return"] = s.mean_return;
      e["std_return"] = s.std_return;
      e["normalized_score"] = s.normalized_score;
      arr.push_back(std::move(e));
    }
    j["scores"] = std::move(arr);
  } else {
    j["scores"] = nullptr;
  }
  nlohmann::ordered_json bytes;
  for (std::size_t c = 0; c < kMessageClasses; ++c) {
    bytes[std::string(message_class_name(static_cast<MessageClass>(c)))] = m.bytes[c];
  }
  bytes["total"] = total(m.bytes);
  j["bytes"] = std::move(bytes);
  return j.dump();
}

RoundMetrics metrics_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  RoundMetrics m;
  m.round = j.at("round").get<std::size_t>();
  m.stage1_loss = j.at("stage1_loss").get<std::vector<double>>();
  m.stage2_loss = j.at("stage2_loss").get<double>();
  if (!j.at("scores").is_null()) {
    std::vector<ScoreReport> scores;
    for (const auto& e : j.at("scores")) {
      ScoreReport s;
      s.type_id = e.at("type_id").get<std::uint32_t>();
      s.mean_return = e.at("mean_return").get<double>();
      s.std_return = e.at("std_return").get<double>();
      s.normalized_score = e.at("normalized_score").get<double>();
      scores.push_back(s);
    }
    m.scores = std::move(scores);
  }
  for (std::size_t c = 0; c < kMessageClasses; ++c) {
    m.bytes[c] = j.at("bytes").at(std::string(message_class_name(static_cast<MessageClass>(c))))
                     .get<std::uint64_t>();
  }
  return m;
}

std::string metrics_csv(const std::vector<RoundMetrics>& metrics) {
  std::size_t K = 0;
  for (const auto& m : metrics) {
    K = std::max(K, m.stage1_loss.size());
    if (m.scores) K = std::max(K, m.scores->size());
  }
  std::ostringstream os;
  os.precision(10);
  os << "round";
  for (std::size_t k = 0; k < K; ++k) os << ",stage1_loss_" << k;
  os << ",stage2_loss";
  for (std::size_t k = 0; k < K; ++k) os << ",score_" << k;
  os << ",mean_score";
  for (std::size_t c = 0; c < kMessageClasses; ++c) {
    os << ',' << message_class_name(static_cast<MessageClass>(c));
  }
  os << ",total_bytes\n";
  for (const auto& m : metrics) {
    os << m.round;
    for (std::size_t k = 0; k < K; ++k) {
      os << ',';
      if (k < m.stage1_loss.size()) os << m.stage1_loss[k];
    }
    os << ',' << m.stage2_loss;
    double mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      os << ',';
      if (m.scores && k < m.scores->size()) {
        os << (*m.scores)[k].normalized_score;
        mean += (*m.scores)[k].normalized_score;
      }
    }
    os << ',';
    if (m.scores && !m.scores->empty()) os << mean / static_cast<double>(m.scores->size());
    for (auto b : m.bytes) os << ',' << b;
    os << ',' << total(m.bytes) << '\n';
  }
  return os.str();
}

std::size_t thread_count_from_env() {
  const char* v = std::getenv("FSDT_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0') throw ConfigError("FSDT_THREADS must be a non-negative integer");
  return n <= 1 ? 1 : static_cast<std::size_t>(n);
}

Federation::Federation(FederationConfig config, std::vector<TypeData> data)
    : config_(std::move(config)), data_(std::move(data)), ledger_(config_.wire_bytes) {
  validate(config_);
  const std::size_t K = config_.clients_per_type.size();
  if (data_.size() != K) {
    throw ContractError("federation: " + std::to_string(K) + " agent types declared but " +
                        std::to_string(data_.size()) + " datasets given");
  }
  for (const auto& td : data_) {
    if (td.dataset.empty()) {
      throw ContractError("federation: no data for type " + std::to_string(td.spec.type_id));
    }
    if (config_.context_length > td.spec.horizon) {
      throw ConfigError("context_length exceeds the horizon of type " + std::to_string(td.spec.type_id));
    }
  }
  threads_ = thread_count_from_env();
  G_ = ServerDecoder(config_.decoder, derive_seed(config_.seed, kStreamDecoder));
  const AdamConfig client_adam{config_.client_lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps};
  server_opt_ = Adam({config_.server_lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps});
  server_rng_ = Rng(derive_seed(config_.seed, kStreamServerSampler));
  std::size_t next_id = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& spec = data_[k].spec;
    globals_.push_back(GlobalClientModel{
        spec.type_id,
        make_client_model(spec.type_id, spec.d, spec.b, config_.decoder.width, spec.horizon,
                          rtg_scale(data_[k].baselines), derive_seed(config_.seed, kStreamGlobalInit + k))});
    auto shards = partition_iid(data_[k].dataset, config_.clients_per_type[k],
                                derive_seed(config_.seed, kStreamPartition + k), next_id);
    for (auto& shard : shards) {
      ClientHandle c;
      c.id = shard.client_id;
      c.type_id = spec.type_id;
      c.shard = std::move(shard);
      c.model = globals_[k].model;
      c.optimizer = Adam(client_adam);
      c.rng = Rng(derive_seed(config_.seed, kStreamClientSampler + c.id));
      clients_.push_back(std::move(c));
      ++next_id;
    }
  }
}

std::vector<ClientHandle*> Federation::clients_of(std::size_t type) {
  std::vector<ClientHandle*> out;
  for (auto& c : clients_) {
    if (c.type_id == globals_[type].type_id) out.push_back(&c);
  }
  return out;
}

std::vector<double> Federation::stage_one() {
  const std::size_t K = globals_.size();
  G_.set_frozen(true);
  for (std::size_t k = 0; k < K; ++k) distribute_type(globals_[k], clients_of(k), ledger_);

  std::vector<double> losses(clients_.size(), 0.0);
  auto train = [&](std::size_t i, ChannelLedger& ledger) {
    losses[i] = local_update(clients_[i], G_, config_.local_steps, config_.batch_size,
                             config_.context_length, ledger);
  };
  if (threads_ <= 1 || clients_.size() <= 1) {
    for (std::size_t i = 0; i < clients_.size(); ++i) train(i, ledger_);
  } else {
    // Each client owns its model, optimizer, sampler and ledger; the decoder
    // is only read. Ledgers are merged in client order afterwards.
    std::vector<ChannelLedger> ledgers(clients_.size(), ChannelLedger(config_.wire_bytes));
    std::vector<std::exception_ptr> errors(clients_.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads_, clients_.size());
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < clients_.size(); i = next++) {
          try {
            train(i, ledgers[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (const auto& l : ledgers) ledger_.merge(l);
  }

  std::vector<double> per_type(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<const ClientModel*> models;
    double sum = 0.0;
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      if (clients_[i].type_id != globals_[k].type_id) continue;
      models.push_back(&clients_[i].model);
      sum += losses[i];
    }
    globals_[k] = aggregate_type(models);
    ledger_.record(MessageClass::ParamsUp, models.size() * globals_[k].model.parameter_count());
    per_type[k] = sum / static_cast<double>(models.size());
  }
  return per_type;
}

double Federation::stage_two() {
  G_.set_frozen(false);
  for (auto& gm : globals_) gm.model.set_frozen(true);
  std::vector<std::vector<const ClientShard*>> shards(globals_.size());
  for (std::size_t k = 0; k < globals_.size(); ++k) {
    for (const auto& c : clients_) {
      if (c.type_id == globals_[k].type_id) shards[k].push_back(&c.shard);
    }
  }
  const double loss = train_server(G_, server_opt_, globals_, shards, config_.server_steps,
                                   config_.batch_size, config_.context_length, server_rng_, ledger_);
  for (auto& gm : globals_) gm.model.set_frozen(false);
  return loss;
}

bool Federation::evaluation_due(std::size_t r) const {
  if (config_.eval_every == 0) return false;
  return r == 0 || r == 1 || r % config_.eval_every == 0 || r == config_.rounds;
}

std::vector<ScoreReport> Federation::evaluate_all() const {
  std::vector<ScoreReport> out;
  for (std::size_t k = 0; k < globals_.size(); ++k) {
    EvalConfig ev;
    ev.target_return = data_[k].baselines.j_expert;
    ev.episodes = config_.eval_episodes;
    ev.h = config_.context_length;
    ev.mode = config_.eval_mode;
    ev.seed = eval_seed(config_.seed, k);
    out.push_back(evaluate(data_[k].spec, data_[k].baselines, globals_[k].model, G_, ev));
  }
  return out;
}

RoundMetrics Federation::round() {
  RoundMetrics m;
  m.stage1_loss = stage_one();
  m.stage2_loss = stage_two();
  ++round_;
  m.round = round_;
  m.bytes = ledger_.end_round();
  if (evaluation_due(round_)) m.scores = evaluate_all();
  return m;
}

std::vector<RoundMetrics> Federation::run(const std::function<void(const RoundMetrics&)>& on_round) {
  std::vector<RoundMetrics> out;
  if (round_ == 0 && evaluation_due(0)) {
    RoundMetrics m;
    m.scores = evaluate_all();
    out.push_back(m);
    if (on_round) on_round(out.back());
  }
  while (round_ < config_.rounds) {
    out.push_back(round());
    if (on_round) on_round(out.back());
  }
  return out;
}

std::vector<Rng::State> Federation::rng_states() const {
  std::vector<Rng::State> out;
  for (const auto& c : clients_) out.push_back(c.rng.state());
  out.push_back(server_rng_.state());
  return out;
}

}  // namespace fsdt
