#ifndef FSDT_FEDERATION_HPP_
#define FSDT_FEDERATION_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsdt/adam.hpp"
#include "fsdt/client_model.hpp"
#include "fsdt/config.hpp"
#include "fsdt/dataset.hpp"
#include "fsdt/evaluation.hpp"
#include "fsdt/ledger.hpp"
#include "fsdt/server_decoder.hpp"
#include "fsdt/trajectory.hpp"

namespace fsdt {

/// Everything the federation needs about one agent type.
struct TypeData {
  AgentTypeSpec spec;
  Baselines baselines;
  std::vector<Trajectory> dataset;  // Expert, Medium and Replay episodes
};

/// Generates every type's tiers (episodes_per_client × N_k per tier) and its
/// baselines from config.seed.
std::vector<TypeData> prepare_data(const FederationConfig& config,
                                   const std::vector<AgentTypeSpec>& specs);

/// Seeds of the baseline rollouts and of the evaluation episodes of the
/// k-th agent type under a run seed.
std::uint64_t baseline_seed(std::uint64_t seed, std::size_t type_index);
std::uint64_t eval_seed(std::uint64_t seed, std::size_t type_index);

/// Returns-to-go divisor of a type: J_expert − J_random.
double rtg_scale(const Baselines& baselines);

enum class Stage { One, Two };

/// Outcome of one training step through the simulated split channel.
struct SplitStep {
  double loss = 0.0;
  Tensor tokens;        // client → server
  Tensor outputs;       // server → client
  Tensor token_grads;   // client → server, d loss / d outputs
  Tensor input_grads;   // server → client, d loss / d tokens
  std::vector<Tensor> client_grads;  // stage one only, ClientModel::parameters() order
  std::vector<Tensor> server_grads;  // stage two only, ServerDecoder::parameters() order
};

/// One forward/backward exchange. The client and the server each build their
/// own graphs and only the four tensors above cross the boundary; each
/// crossing is charged to `ledger` when given. In stage one the decoder's
/// parameter gradients are computed and dropped; in stage two the client's are.
SplitStep split_step(const ClientModel& client, const ServerDecoder& G,
                     const std::vector<ContextWindow>& batch, Stage stage, ChannelLedger* ledger);

struct ClientHandle {
  std::size_t id = 0;
  std::uint32_t type_id = 0;
  ClientShard shard;
  ClientModel model;
  Adam optimizer;
  Rng rng;
};

struct GlobalClientModel {
  std::uint32_t type_id = 0;
  ClientModel model;
};

/// Stage one for one client: `steps` Adam updates of E and P against the
/// frozen decoder. Returns the mean loss. Throws ContractError unless every
/// decoder parameter is frozen.
double local_update(ClientHandle& client, const ServerDecoder& G, std::size_t steps,
                    std::size_t batch_size, std::size_t h, ChannelLedger& ledger);

/// Unweighted elementwise mean of same-type client models. Each scalar is the
/// mean of its values taken in sorted order, so the result does not depend on
/// client order and equal inputs come back unchanged.
GlobalClientModel aggregate_type(const std::vector<const ClientModel*>& clients);

/// Copies the global model into every client and resets their Adam moments.
void distribute_type(const GlobalClientModel& global, const std::vector<ClientHandle*>& clients,
                     ChannelLedger& ledger);

/// Stage two: `steps` Adam updates of G through the frozen per-type global
/// models. Step s uses type s mod K and cycles through that type's shards.
/// Throws ContractError if any global model is trainable or G is frozen.
double train_server(ServerDecoder& G, Adam& optimizer, const std::vector<GlobalClientModel>& globals,
                    const std::vector<std::vector<const ClientShard*>>& shards, std::size_t steps,
                    std::size_t batch_size, std::size_t h, Rng& rng, ChannelLedger& ledger);

struct RoundMetrics {
  std::size_t round = 0;
  std::vector<double> stage1_loss;  // per type
  double stage2_loss = 0.0;
  std::optional<std::vector<ScoreReport>> scores;
  ByteCounts bytes{};
};

std::string to_jsonl(const RoundMetrics& m);
RoundMetrics metrics_from_jsonl(const std::string& line);
/// One row per round: losses, scores (blank when not evaluated) and bytes.
std::string metrics_csv(const std::vector<RoundMetrics>& metrics);

/// Owns all run state and executes rounds.
class Federation {
 public:
  Federation(FederationConfig config, std::vector<TypeData> data);

  const FederationConfig& config() const { return config_; }
  const std::vector<TypeData>& data() const { return data_; }
  const ServerDecoder& decoder() const { return G_; }
  const std::vector<GlobalClientModel>& globals() const { return globals_; }
  const std::vector<ClientHandle>& clients() const { return clients_; }
  const ChannelLedger& ledger() const { return ledger_; }
  std::size_t completed_rounds() const { return round_; }

  /// Distribute, local updates and aggregation for every type. Returns the
  /// mean stage-one loss per type.
  std::vector<double> stage_one();
  /// Server training. Returns the mean stage-two loss.
  double stage_two();
  /// Both stages, then evaluation when scheduled.
  RoundMetrics round();
  /// Scores of the current global models.
  std::vector<ScoreReport> evaluate_all() const;
  bool evaluation_due(std::size_t round) const;

  /// Round-0 evaluation (when enabled) followed by config.rounds rounds.
  /// `on_round` sees every record as it is produced.
  std::vector<RoundMetrics> run(const std::function<void(const RoundMetrics&)>& on_round = {});

  /// Generator states: one per client, then the server sampler.
  std::vector<Rng::State> rng_states() const;

 private:
  std::vector<ClientHandle*> clients_of(std::size_t type);

  FederationConfig config_;
  std::vector<TypeData> data_;
  ServerDecoder G_;
  Adam server_opt_;
  std::vector<GlobalClientModel> globals_;
  std::vector<ClientHandle> clients_;
  Rng server_rng_;
  ChannelLedger ledger_;
  std::size_t round_ = 0;
  std::size_t threads_ = 1;
};

/// Worker count from FSDT_THREADS; unset, 0 or 1 mean sequential.
std::size_t thread_count_from_env();

}  // namespace fsdt

#endif  // FSDT_FEDERATION_HPP_
