#include "fedspzo/cost.hpp"

#include <algorithm>

namespace fedspzo {

std::uint64_t forward_flops(const ModelSpec& spec, std::size_t batch_size, std::size_t first_layer,
                            std::size_t last_layer) {
  std::uint64_t total = 0;
  for (std::size_t i = first_layer; i < last_layer && i < spec.layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i]))
      total += 2ULL * d->in * d->out * batch_size;
    else
      total += static_cast<std::uint64_t>(std::get<ActivationLayer>(spec.layers[i]).width) * batch_size;
  }
  return total;
}

std::uint64_t forward_flops(const ModelSpec& spec, std::size_t batch_size) {
  return forward_flops(spec, batch_size, 0, spec.layers.size());
}

FlopBreakdown zo_step_cost_single(std::uint64_t fw, std::uint64_t p, std::uint64_t d,
                                  DifferenceKind kind, FlopConstants c) {
  FlopBreakdown b;
  if (kind == DifferenceKind::central) {
    b.forward = 2 * fw * p;
    b.perturb = 3 * p * c.perturb_per_param * d;
  } else {
    b.forward = fw * (1 + p);
    b.perturb = 2 * p * c.perturb_per_param * d;
  }
  b.update = p * c.update_per_param * d;
  return b;
}

std::uint64_t zo_step_flops_single(std::uint64_t fw, std::uint64_t p, std::uint64_t d,
                                   DifferenceKind kind, FlopConstants c) {
  return zo_step_cost_single(fw, p, d, kind, c).total();
}

CostModelParams CostModelParams::for_model(const ModelSpec& spec, std::size_t batch_size,
                                           FlopConstants c) {
  const BlockSplit s = block_split(spec);
  CostModelParams m;
  m.fw1 = forward_flops(spec, batch_size, 0, spec.cut);
  m.fw2 = forward_flops(spec, batch_size, spec.cut, spec.layers.size());
  m.d1 = s.d1;
  m.d2 = s.d2;
  m.constants = c;
  return m;
}

FlopBreakdown zo_step_cost_split(const SplitConfig& cfg, const CostModelParams& m) {
  const std::uint64_t p1 = cfg.p1, p2 = cfg.p2;
  const std::uint64_t p = m.constants.perturb_per_param, u = m.constants.update_per_param;
  FlopBreakdown b;
  b.forward = 2 * m.fw1 * p1 + 2 * m.fw2 * p2;
  b.perturb = 3 * (p1 * p * m.d1 + p2 * p * m.d2);
  b.update = p1 * u * m.d1 + p2 * u * m.d2;
  return b;
}

std::uint64_t zo_step_flops_split(const SplitConfig& cfg, const CostModelParams& m) {
  return zo_step_cost_split(cfg, m).total();
}

std::size_t payload_header_bytes(PayloadMode mode) {
  // magic, version, client_id, round_id, mode, K, P1, P2 (+ root seed)
  const std::size_t fixed = 4 + 4 + 4 + 4 + 1 + 4 + 4 + 4;
  return fixed + (mode == PayloadMode::scalars_only ? 8 : 0);
}

std::size_t payload_body_bytes(std::size_t k, std::size_t p1, std::size_t p2, PayloadMode mode) {
  const std::size_t scalars = k * 2 * 8;
  return mode == PayloadMode::with_seeds ? scalars + k * (p1 + p2) * 8 : scalars;
}

std::size_t payload_bytes(std::size_t k, std::size_t p1, std::size_t p2, PayloadMode mode) {
  return payload_header_bytes(mode) + payload_body_bytes(k, p1, p2, mode);
}

namespace {

std::uint64_t output_elems(const ModelSpec& spec, std::size_t layer, std::size_t batch_size) {
  return static_cast<std::uint64_t>(layer_output_width(spec.layers[layer])) * batch_size;
}

}  // namespace

std::uint64_t peak_memory_model(const ModelSpec& spec, std::size_t cut, std::size_t batch_size,
                                Precision precision) {
  if (cut == 0 || cut >= spec.layers.size()) throw ConfigError("cut outside the layer list");
  std::uint64_t before = 0;
  for (std::size_t i = 0; i + 1 < cut; ++i) before = std::max(before, output_elems(spec, i, batch_size));
  std::uint64_t after = 0;
  for (std::size_t i = cut; i < spec.layers.size(); ++i)
    after = std::max(after, output_elems(spec, i, batch_size));
  const std::uint64_t cached = output_elems(spec, cut - 1, batch_size);
  return (spec.param_count() + std::max(before, cached + after)) * scalar_bytes(precision);
}

std::uint64_t peak_memory_single(const ModelSpec& spec, std::size_t batch_size, Precision precision) {
  std::uint64_t widest = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    widest = std::max(widest, output_elems(spec, i, batch_size));
  return (spec.param_count() + widest) * scalar_bytes(precision);
}

std::uint64_t peak_memory_backprop(const ModelSpec& spec, std::size_t batch_size, Precision precision) {
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) stored += output_elems(spec, i, batch_size);
  return (2 * spec.param_count() + stored) * scalar_bytes(precision);
}

std::uint64_t cut_cache_bytes(const ModelSpec& spec, std::size_t cut, std::size_t batch_size,
                              Precision precision) {
  if (cut == 0 || cut >= spec.layers.size()) throw ConfigError("cut outside the layer list");
  return output_elems(spec, cut - 1, batch_size) * scalar_bytes(precision);
}

}  // namespace fedspzo
