#pragma once

// Instrumentation counters filled in by the estimators as they run. The
// analytic formulas in cost.hpp must agree with these exactly.

#include <array>
#include <cstddef>
#include <cstdint>

namespace fedspzo {

// Per-parameter cost of one perturbation pass (sample and add) and one
// update pass (two multiplies and a subtract). RNG arithmetic is excluded.
struct FlopConstants {
  std::uint64_t perturb_per_param = 2;
  std::uint64_t update_per_param = 3;
  bool operator==(const FlopConstants&) const = default;
};

enum class Block : std::uint8_t { whole = 0, first = 1, second = 2 };

struct OpCounters {
  std::uint64_t fw_flops = 0;
  std::uint64_t perturb_flops = 0;
  std::uint64_t update_flops = 0;
  std::array<std::uint64_t, 3> forwards{};
  std::array<std::uint64_t, 3> perturb_passes{};
  std::array<std::uint64_t, 3> update_passes{};

  std::uint64_t total_flops() const { return fw_flops + perturb_flops + update_flops; }

  OpCounters& operator+=(const OpCounters& o) {
    fw_flops += o.fw_flops;
    perturb_flops += o.perturb_flops;
    update_flops += o.update_flops;
    for (std::size_t i = 0; i < 3; ++i) {
      forwards[i] += o.forwards[i];
      perturb_passes[i] += o.perturb_passes[i];
      update_passes[i] += o.update_passes[i];
    }
    return *this;
  }
  bool operator==(const OpCounters&) const = default;
};

class CostMeter {
 public:
  explicit CostMeter(FlopConstants constants = {}) : constants_(constants) {}

  void forward(Block b, std::uint64_t flops) {
    counters_.fw_flops += flops;
    ++counters_.forwards[index(b)];
  }

  void perturb_pass(Block b, std::size_t n_params) {
    counters_.perturb_flops += constants_.perturb_per_param * n_params;
    ++counters_.perturb_passes[index(b)];
  }

  void update_pass(Block b, std::size_t n_params) {
    counters_.update_flops += constants_.update_per_param * n_params;
    ++counters_.update_passes[index(b)];
  }

  const OpCounters& counters() const { return counters_; }
  const FlopConstants& constants() const { return constants_; }
  void reset() { counters_ = {}; }

 private:
  static std::size_t index(Block b) { return static_cast<std::size_t>(b); }

  FlopConstants constants_;
  OpCounters counters_;
};

}  // namespace fedspzo
