#include "fedspzo/protocol.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <thread>

namespace fedspzo {

std::size_t seeds_per_step(const SplitConfig& cfg) { return cfg.p1 * (2 + 2 * cfg.ps()); }

Seed derive_seeds(Seed root, std::size_t step, SeedSlot slot, const SplitConfig& cfg) {
  const std::size_t ps = cfg.ps();
  if (slot.outer >= cfg.p1 || (slot.kind != SeedSlotKind::s1 && slot.kind != SeedSlotKind::shift &&
                               slot.inner >= ps))
    throw ContractError("seed slot outside the step layout");
  const std::size_t base = step * seeds_per_step(cfg) + slot.outer * (2 + 2 * ps);
  std::size_t offset = 0;
  switch (slot.kind) {
    case SeedSlotKind::s1: offset = 0; break;
    case SeedSlotKind::s2_plus: offset = 1 + slot.inner; break;
    case SeedSlotKind::shift: offset = 1 + ps; break;
    case SeedSlotKind::s2_minus: offset = 2 + ps + slot.inner; break;
  }
  SeedSource source(root);
  for (std::size_t i = 0; i < base + offset; ++i) source.next();
  return source.next();
}

std::vector<StepSeeds> derive_step_seeds(Seed root, std::size_t k_steps, const SplitConfig& cfg) {
  SeedSource source(root);
  std::vector<StepSeeds> out;
  out.reserve(k_steps);
  for (std::size_t k = 0; k < k_steps; ++k) out.push_back(draw_step_seeds(source, cfg));
  return out;
}

template <class T>
ClientResult<T> client_train(const SplitModel<T>& model, const ParamVector<T>& theta_round,
                             const SplitConfig& cfg, std::size_t k_steps, const Dataset& data,
                             const ClientTrainOptions& opts) {
  cfg.validate();
  const BlockSplit split = model.split();
  if (theta_round.size() != split.d())
    throw ConfigError("round parameters have length " + std::to_string(theta_round.size()) +
                      ", model expects " + std::to_string(split.d()));
  if (data.size() == 0)
    throw ConfigError("client " + std::to_string(opts.client_id) + " has an empty dataset");

  ClientResult<T> out;
  out.final_params = theta_round;
  out.payload.client_id = opts.client_id;
  out.payload.round_id = opts.round_id;
  out.payload.mode = opts.mode;
  out.payload.p1 = static_cast<std::uint32_t>(cfg.p1);
  out.payload.p2 = static_cast<std::uint32_t>(cfg.p2);
  if (opts.mode == PayloadMode::scalars_only) out.payload.root_seed = opts.root_seed;
  out.payload.steps.reserve(k_steps);

  CostMeter meter(opts.flops);
  SeedSource seeds(opts.root_seed);
  Xoshiro256pp batch_rng(opts.batch_seed);
  auto theta1 = out.final_params.block1(split);
  auto theta2 = out.final_params.block2(split);

  for (std::size_t k = 0; k < k_steps; ++k) {
    const Batch<T> batch = sample_batch<T>(data, opts.batch_size, batch_rng);
    try {
      const SpzoStepResult<T> step = spzo_step(model, theta1, theta2, batch, cfg, seeds, &meter);
      apply_split_update<T>(theta1, theta2, step.g1, step.s1, step.g2, step.s2, cfg.lr, &meter);
      StepRecord rec;
      rec.g1 = static_cast<double>(step.g1);
      rec.g2 = static_cast<double>(step.g2);
      if (opts.mode == PayloadMode::with_seeds) {
        rec.s1 = step.s1;
        rec.s2 = step.s2;
      }
      out.payload.steps.push_back(std::move(rec));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (client " + std::to_string(opts.client_id) +
                             ", step " + std::to_string(k) + ")",
                         e.layer());
    }
  }
  out.counters = meter.counters();
  return out;
}

template <class T>
ParamVector<T> reconstruct(const ParamVector<T>& theta_round, const ClientPayload& payload,
                           const BlockSplit& split, const SplitConfig& cfg) {
  payload.validate();
  if (payload.p1 != cfg.p1 || payload.p2 != cfg.p2)
    throw ContractError("payload perturbation counts (" + std::to_string(payload.p1) + ", " +
                        std::to_string(payload.p2) + ") differ from the round config");
  if (theta_round.size() != split.d()) throw ContractError("round parameters do not match the split");

  std::vector<StepSeeds> derived;
  if (payload.mode == PayloadMode::scalars_only)
    derived = derive_step_seeds(*payload.root_seed, payload.k(), cfg);

  ParamVector<T> theta = theta_round;
  auto theta1 = theta.block1(split);
  auto theta2 = theta.block2(split);
  for (std::size_t k = 0; k < payload.k(); ++k) {
    const StepRecord& r = payload.steps[k];
    const bool seeded = payload.mode == PayloadMode::with_seeds;
    const std::span<const Seed> s1 = seeded ? std::span<const Seed>(r.s1) : derived[k].s1;
    const std::span<const Seed> s2 = seeded ? std::span<const Seed>(r.s2) : derived[k].s2;
    replay_perturbation_cycles<T>(theta1, theta2, s1, s2, cfg.eps);
    apply_split_update<T>(theta1, theta2, static_cast<T>(r.g1), s1, static_cast<T>(r.g2), s2, cfg.lr);
  }
  return theta;
}

template <class T>
ParamVector<T> aggregate(std::span<const ParamVector<T>> models) {
  if (models.empty()) throw ContractError("aggregate: no models");
  const std::size_t d = models.front().size();
  for (const auto& m : models)
    if (m.size() != d) throw ContractError("aggregate: parameter lengths differ");
  ParamVector<T> out(d);
  for (const auto& m : models)
    for (std::size_t i = 0; i < d; ++i) out[i] += m[i];
  const T count = static_cast<T>(models.size());
  for (std::size_t i = 0; i < d; ++i) out[i] /= count;
  return out;
}

std::vector<std::uint32_t> client_sampler(std::uint32_t round_id, Seed master_seed,
                                          std::size_t n_clients, std::size_t m) {
  if (m < 1 || m > n_clients)
    throw ConfigError("cannot sample " + std::to_string(m) + " of " + std::to_string(n_clients) +
                      " clients");
  Xoshiro256pp rng(derive_seed(master_seed, {0x5a3b1e, round_id}));
  std::vector<std::uint32_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0u);
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + rng.below(n_clients - i)]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Seed client_root_seed(Seed master_seed, std::uint32_t round_id, std::uint32_t client_id) {
  return derive_seed(master_seed, {0x5eed, round_id, client_id});
}

Seed client_batch_seed(Seed master_seed, std::uint32_t round_id, std::uint32_t client_id) {
  return derive_seed(master_seed, {0xba7c4, round_id, client_id});
}

std::string to_string(Method m) {
  switch (m) {
    case Method::fedspzo: return "fedspzo";
    case Method::central_zo: return "central_zo";
    case Method::forward_zo: return "forward_zo";
    case Method::fedavg_fo: return "fedavg_fo";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::fedspzo, Method::central_zo, Method::forward_zo, Method::fedavg_fo})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "' (expected fedspzo, central_zo, forward_zo or fedavg_fo)");
}

template <class T>
Federation<T>::Federation(const Mlp<T>& model, std::vector<Dataset> client_data, ParamVector<T> initial,
                          FederationConfig cfg)
    : model_(model), clients_(std::move(client_data)), global_(std::move(initial)), cfg_(cfg) {
  if (global_.size() != model_.param_count()) throw ConfigError("initial parameters do not match model");
  if (clients_.empty()) throw ConfigError("federation needs at least one client");
  if (cfg_.clients_per_round < 1 || cfg_.clients_per_round > clients_.size())
    throw ConfigError("clients_per_round must lie in [1, n_clients]");
  if (cfg_.method == Method::fedspzo) cfg_.split.validate();
  if ((cfg_.method == Method::central_zo || cfg_.method == Method::forward_zo) && cfg_.p < 1)
    throw ConfigError("P must be >= 1");
  if (cfg_.workers == 0) cfg_.workers = 1;

  const ModelSpec& spec = model_.spec();
  const Precision prec = precision_of<T>();
  switch (cfg_.method) {
    case Method::fedspzo:
      ledger_.peak_memory_bytes = peak_memory_model(spec, spec.cut, cfg_.batch_size, prec);
      break;
    case Method::central_zo:
    case Method::forward_zo:
      ledger_.peak_memory_bytes = peak_memory_single(spec, cfg_.batch_size, prec);
      break;
    case Method::fedavg_fo:
      ledger_.peak_memory_bytes = peak_memory_backprop(spec, cfg_.batch_size, prec);
      break;
  }
}

template <class T>
RoundPlan Federation<T>::plan_round(std::uint32_t round_id) const {
  RoundPlan plan;
  plan.round_id = round_id;
  plan.clients = client_sampler(round_id, cfg_.master_seed, clients_.size(), cfg_.clients_per_round);
  for (std::uint32_t c : plan.clients) plan.root_seeds.push_back(client_root_seed(cfg_.master_seed, round_id, c));
  return plan;
}

template <class T>
typename Federation<T>::ClientOutcome Federation<T>::train_client(std::uint32_t client, Seed root_seed,
                                                                  std::uint32_t round_id) const {
  const Dataset& data = clients_.at(client);
  const Seed batch_seed = client_batch_seed(cfg_.master_seed, round_id, client);
  ClientOutcome out;

  if (cfg_.method == Method::fedspzo) {
    ClientTrainOptions opts;
    opts.client_id = client;
    opts.round_id = round_id;
    opts.root_seed = root_seed;
    opts.batch_seed = batch_seed;
    opts.batch_size = cfg_.batch_size;
    opts.mode = cfg_.mode;
    opts.flops = cfg_.flops;
    ClientResult<T> r = client_train(model_, global_, cfg_.split, cfg_.local_steps, data, opts);
    out.payload = encode_payload(r.payload);
    out.upload_bytes = out.payload.size();
    out.counters = r.counters;
    out.params = std::move(r.final_params);
    return out;
  }

  CostMeter meter(cfg_.flops);
  out.params = global_;
  Xoshiro256pp batch_rng(batch_seed);
  SeedSource seeds(root_seed);
  const std::uint64_t fw = model_.block1_flops(cfg_.batch_size) + model_.block2_flops(cfg_.batch_size);
  for (std::size_t k = 0; k < cfg_.local_steps; ++k) {
    const Batch<T> batch = sample_batch<T>(data, cfg_.batch_size, batch_rng);
    if (cfg_.method == Method::fedavg_fo) {
      const std::vector<T> grad = model_.backprop_gradient(out.params.values(), batch);
      // Backward pass costed as two forwards.
      meter.forward(Block::whole, 3 * fw);
      const T lr = static_cast<T>(cfg_.split.lr);
      for (std::size_t i = 0; i < grad.size(); ++i) out.params[i] -= lr * grad[i];
      meter.update_pass(Block::whole, grad.size());
    } else {
      const DifferenceKind kind =
          cfg_.method == Method::central_zo ? DifferenceKind::central : DifferenceKind::forward;
      const ZoStepResult<T> step =
          zo_step_full(model_, out.params.values(), batch, cfg_.p, cfg_.split.eps, kind, seeds, &meter);
      apply_full_update(out.params.values(), step, cfg_.split.lr, &meter);
    }
  }
  out.counters = meter.counters();
  out.upload_bytes = cfg_.method == Method::fedavg_fo
                         ? out.params.size() * sizeof(T)
                         : cfg_.local_steps * cfg_.p * (8 + (cfg_.mode == PayloadMode::with_seeds ? 8 : 0)) +
                               (cfg_.mode == PayloadMode::scalars_only ? 8 : 0);
  return out;
}

template <class T>
RoundReport Federation<T>::run_round(const RoundPlan& plan) {
  if (plan.clients.empty() || plan.clients.size() != plan.root_seeds.size())
    throw ContractError("round plan needs one root seed per sampled client");
  if (!std::is_sorted(plan.clients.begin(), plan.clients.end()) ||
      std::adjacent_find(plan.clients.begin(), plan.clients.end()) != plan.clients.end())
    throw ContractError("round plan client ids must be distinct and ascending");

  const std::size_t m = plan.clients.size();
  std::vector<ClientOutcome> outcomes(m);
  std::vector<std::exception_ptr> errors(m);
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < m; i += cfg_.workers) {
      try {
        outcomes[i] = train_client(plan.clients[i], plan.root_seeds[i], plan.round_id);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(cfg_.workers, m);
  if (n_threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  RoundReport report;
  report.round_id = plan.round_id;
  report.clients = plan.clients;
  std::vector<ParamVector<T>> models;
  models.reserve(m);
  const BlockSplit split = model_.split();
  for (std::size_t i = 0; i < m; ++i) {
    ClientOutcome& o = outcomes[i];
    report.delta.add_compute(o.counters);
    report.delta.upload_bytes += o.upload_bytes;
    report.delta.download_bytes += global_.size() * sizeof(T);
    if (cfg_.method == Method::fedspzo) {
      const ClientPayload payload = decode_payload(o.payload);
      ParamVector<T> rebuilt = reconstruct(global_, payload, split, cfg_.split);
      if (cfg_.check_reconstruction && !bitwise_equal(rebuilt, o.params))
        throw InvariantError("round " + std::to_string(plan.round_id) + ", client " +
                             std::to_string(plan.clients[i]) +
                             ": reconstruction differs from the client's model");
      models.push_back(std::move(rebuilt));
      report.payloads.push_back(std::move(o.payload));
    } else {
      models.push_back(std::move(o.params));
    }
  }
  global_ = aggregate<T>(models);
  global_.check_finite();
  report.delta.peak_memory_bytes = ledger_.peak_memory_bytes;
  ledger_.merge(report.delta);
  return report;
}

#define FEDSPZO_INSTANTIATE(T)                                                                       \
  template ClientResult<T> client_train(const SplitModel<T>&, const ParamVector<T>&,                 \
                                        const SplitConfig&, std::size_t, const Dataset&,             \
                                        const ClientTrainOptions&);                                  \
  template ParamVector<T> reconstruct(const ParamVector<T>&, const ClientPayload&, const BlockSplit&, \
                                      const SplitConfig&);                                           \
  template ParamVector<T> aggregate(std::span<const ParamVector<T>>);                                \
  template class Federation<T>;

FEDSPZO_INSTANTIATE(float)
FEDSPZO_INSTANTIATE(double)
#undef FEDSPZO_INSTANTIATE

}  // namespace fedspzo
