#pragma once

// Federated round: clients train locally and upload scalars (+ seeds), the
// server rebuilds each client's model by replaying the updates, then
// averages. Baseline methods (whole-model ZO and first-order FedAvg) share
// the same round driver so their costs land in the same ledger.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedspzo/cost.hpp"
#include "fedspzo/cost_meter.hpp"
#include "fedspzo/data.hpp"
#include "fedspzo/estimators.hpp"
#include "fedspzo/model.hpp"
#include "fedspzo/payload.hpp"

namespace fedspzo {

// Which draw of the per-step seed stream a seed occupies. `outer` indexes
// the P1 loop, `inner` the Ps loop.
enum class SeedSlotKind { s1, shift, s2_plus, s2_minus };

struct SeedSlot {
  SeedSlotKind kind = SeedSlotKind::s1;
  std::size_t outer = 0;
  std::size_t inner = 0;
};

// P1 * (1 + 1 + 2*Ps): s1, the shift, and the inner seeds.
std::size_t seeds_per_step(const SplitConfig& cfg);

// Raw draw at (step, slot) of the stream rooted at `root`. For s2_minus this
// is the value before the shift is added.
Seed derive_seeds(Seed root, std::size_t step, SeedSlot slot, const SplitConfig& cfg);

// The S1/S2 lists of the first k steps, exactly as the client records them.
std::vector<StepSeeds> derive_step_seeds(Seed root, std::size_t k_steps, const SplitConfig& cfg);

struct ClientTrainOptions {
  std::uint32_t client_id = 0;
  std::uint32_t round_id = 0;
  Seed root_seed = 0;   // perturbation seed stream
  Seed batch_seed = 0;  // minibatch sampling
  std::size_t batch_size = 32;
  PayloadMode mode = PayloadMode::with_seeds;
  FlopConstants flops;
};

template <class T>
struct ClientResult {
  ClientPayload payload;
  ParamVector<T> final_params;
  OpCounters counters;
};

// K local split-perturbation steps starting from theta_round.
template <class T>
ClientResult<T> client_train(const SplitModel<T>& model, const ParamVector<T>& theta_round,
                             const SplitConfig& cfg, std::size_t k_steps, const Dataset& data,
                             const ClientTrainOptions& opts);

// Replays a payload on top of theta_round: per step the perturbation
// cycles (seeds only) and then the update. No forward pass, no data.
template <class T>
ParamVector<T> reconstruct(const ParamVector<T>& theta_round, const ClientPayload& payload,
                           const BlockSplit& split, const SplitConfig& cfg);

// Element-wise mean, summed in the order given.
template <class T>
ParamVector<T> aggregate(std::span<const ParamVector<T>> models);

// m distinct ids from [0, n_clients), uniform, deterministic in
// (master_seed, round_id), returned ascending.
std::vector<std::uint32_t> client_sampler(std::uint32_t round_id, Seed master_seed,
                                          std::size_t n_clients, std::size_t m);

Seed client_root_seed(Seed master_seed, std::uint32_t round_id, std::uint32_t client_id);
Seed client_batch_seed(Seed master_seed, std::uint32_t round_id, std::uint32_t client_id);

enum class Method { fedspzo, central_zo, forward_zo, fedavg_fo };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct FederationConfig {
  Method method = Method::fedspzo;
  SplitConfig split;  // eps and lr are shared by every method
  std::size_t p = 1;  // whole-model perturbations for the ZO baselines
  std::size_t local_steps = 20;
  std::size_t batch_size = 32;
  std::size_t clients_per_round = 1;
  PayloadMode mode = PayloadMode::with_seeds;
  Seed master_seed = 0;
  std::size_t workers = 1;
  FlopConstants flops;
  // Compare every reconstruction against the client's own final model.
  bool check_reconstruction = true;
};

struct RoundPlan {
  std::uint32_t round_id = 0;
  std::vector<std::uint32_t> clients;  // ascending
  std::vector<Seed> root_seeds;        // one per sampled client
};

struct RoundReport {
  std::uint32_t round_id = 0;
  std::vector<std::uint32_t> clients;
  CostLedger delta;
  std::vector<std::vector<std::uint8_t>> payloads;  // fedspzo only, in client order
};

template <class T>
class Federation {
 public:
  Federation(const Mlp<T>& model, std::vector<Dataset> client_data, ParamVector<T> initial,
             FederationConfig cfg);

  RoundPlan plan_round(std::uint32_t round_id) const;

  // Broadcast, local training on every sampled client, reconstruction (or
  // direct upload for the baselines), aggregation in ascending client id.
  RoundReport run_round(const RoundPlan& plan);

  const ParamVector<T>& global() const { return global_; }
  const CostLedger& ledger() const { return ledger_; }
  const FederationConfig& config() const { return cfg_; }
  std::size_t n_clients() const { return clients_.size(); }

 private:
  struct ClientOutcome {
    ParamVector<T> params;
    OpCounters counters;
    std::vector<std::uint8_t> payload;
    std::uint64_t upload_bytes = 0;
  };

  ClientOutcome train_client(std::uint32_t client, Seed root_seed, std::uint32_t round_id) const;

  const Mlp<T>& model_;
  std::vector<Dataset> clients_;
  ParamVector<T> global_;
  FederationConfig cfg_;
  CostLedger ledger_;
};

}  // namespace fedspzo
