#pragma once

// Analytic cost model for zero-order steps plus the cumulative ledger kept
// by a federated run.
//
//   central, whole model : 2*fw*P          + 3*P*p*d          + P*u*d
//   forward, whole model : fw*(1+P)        + 2*P*p*d          + P*u*d
//   split (P1, P2)       : 2*fw1*P1 + 2*fw2*P2 + 3*(P1*p*d1 + P2*p*d2) + (P1*u*d1 + P2*u*d2)
//
// with p, u the per-parameter perturb and update constants (FlopConstants).

#include <cstddef>
#include <cstdint>

#include "fedspzo/cost_meter.hpp"
#include "fedspzo/estimators.hpp"
#include "fedspzo/model.hpp"
#include "fedspzo/payload.hpp"

namespace fedspzo {

struct FlopBreakdown {
  std::uint64_t forward = 0;
  std::uint64_t perturb = 0;
  std::uint64_t update = 0;

  std::uint64_t total() const { return forward + perturb + update; }
  bool operator==(const FlopBreakdown&) const = default;
};

// Dense: 2*in*out per sample. Activation: 1 per element. Loss not counted.
std::uint64_t forward_flops(const ModelSpec& spec, std::size_t batch_size);
std::uint64_t forward_flops(const ModelSpec& spec, std::size_t batch_size, std::size_t first_layer,
                            std::size_t last_layer);

FlopBreakdown zo_step_cost_single(std::uint64_t fw, std::uint64_t p, std::uint64_t d,
                                  DifferenceKind kind, FlopConstants c = {});
std::uint64_t zo_step_flops_single(std::uint64_t fw, std::uint64_t p, std::uint64_t d,
                                   DifferenceKind kind, FlopConstants c = {});

struct CostModelParams {
  std::uint64_t fw1 = 0;
  std::uint64_t fw2 = 0;
  std::uint64_t d1 = 0;
  std::uint64_t d2 = 0;
  FlopConstants constants;

  static CostModelParams for_model(const ModelSpec& spec, std::size_t batch_size,
                                   FlopConstants c = {});
};

FlopBreakdown zo_step_cost_split(const SplitConfig& cfg, const CostModelParams& params);
std::uint64_t zo_step_flops_split(const SplitConfig& cfg, const CostModelParams& params);

std::size_t payload_header_bytes(PayloadMode mode);
std::size_t payload_body_bytes(std::size_t k, std::size_t p1, std::size_t p2, PayloadMode mode);
std::size_t payload_bytes(std::size_t k, std::size_t p1, std::size_t p2, PayloadMode mode);

// (d + max(max_{i<l} y_i, y_l + max_{i>l} y_i)) * bytes, where y_i is the
// element count of layer i's output at this batch size and y_l the cached
// output of the last f1 layer.
std::uint64_t peak_memory_model(const ModelSpec& spec, std::size_t cut, std::size_t batch_size,
                                Precision precision);
// Single-block footprint without a cached activation: (d + max_i y_i) * bytes.
std::uint64_t peak_memory_single(const ModelSpec& spec, std::size_t batch_size, Precision precision);
// First-order backprop footprint: parameters, gradients and every stored
// layer output, (2d + sum_i y_i) * bytes.
std::uint64_t peak_memory_backprop(const ModelSpec& spec, std::size_t batch_size, Precision precision);
// Bytes of the cached cut activation y_l.
std::uint64_t cut_cache_bytes(const ModelSpec& spec, std::size_t cut, std::size_t batch_size,
                              Precision precision);

struct CostLedger {
  std::uint64_t fw_flops = 0;
  std::uint64_t perturb_flops = 0;
  std::uint64_t update_flops = 0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::uint64_t peak_memory_bytes = 0;

  void add_compute(const OpCounters& c) {
    fw_flops += c.fw_flops;
    perturb_flops += c.perturb_flops;
    update_flops += c.update_flops;
  }

  // Sums the counters, keeps the larger peak. Associative and commutative,
  // so client shards can be merged in any order.
  CostLedger& merge(const CostLedger& o) {
    fw_flops += o.fw_flops;
    perturb_flops += o.perturb_flops;
    update_flops += o.update_flops;
    upload_bytes += o.upload_bytes;
    download_bytes += o.download_bytes;
    if (o.peak_memory_bytes > peak_memory_bytes) peak_memory_bytes = o.peak_memory_bytes;
    return *this;
  }

  // True when every field of *this is >= the same field of `earlier`.
  bool monotone_since(const CostLedger& earlier) const {
    return fw_flops >= earlier.fw_flops && perturb_flops >= earlier.perturb_flops &&
           update_flops >= earlier.update_flops && upload_bytes >= earlier.upload_bytes &&
           download_bytes >= earlier.download_bytes &&
           peak_memory_bytes >= earlier.peak_memory_bytes;
  }

  bool operator==(const CostLedger&) const = default;
};

}  // namespace fedspzo
