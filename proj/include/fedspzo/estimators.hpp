#pragma once

// Zero-order gradient estimators: single-perturbation central and forward
// differences over the whole model, and the split-perturbation step that
// perturbs the first block P1 times and the (cheap) second block P2 times,
// reusing the cached cut activation for every second-block evaluation.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fedspzo/cost_meter.hpp"
#include "fedspzo/errors.hpp"
#include "fedspzo/model.hpp"
#include "fedspzo/perturb.hpp"
#include "fedspzo/rng.hpp"

namespace fedspzo {

struct SplitConfig {
  std::size_t p1 = 2;  // outer perturbations of theta1
  std::size_t p2 = 8;  // total inner perturbations of theta2
  double eps = 1e-3;
  double lr = 1e-3;

  // Inner perturbations per f1 direction (P2 = 2 * P1 * Ps).
  std::size_t ps() const { return p1 == 0 ? 0 : p2 / (2 * p1); }

  // ConfigError unless P1 >= 1, P2 = 2*P1*Ps with Ps >= 1, eps > 0, lr > 0.
  void validate() const;

  bool operator==(const SplitConfig&) const = default;
};

// Seeds sampled uniformly from {0, ..., 10^8}, in the order training consumes
// them. Both the client and (in scalars-only mode) the server drive one of
// these from the same root.
class SeedSource {
 public:
  explicit SeedSource(Seed root) : rng_(root) {}

  Seed next() {
    ++drawn_;
    return rng_.inclusive(kMaxTrainingSeed);
  }
  std::size_t drawn() const { return drawn_; }

 private:
  Xoshiro256pp rng_;
  std::size_t drawn_ = 0;
};

struct StepSeeds {
  std::vector<Seed> s1;  // P1 outer seeds
  std::vector<Seed> s2;  // P2 inner seeds; the -z1 half already carries its shift
};

// Per outer perturbation i: s1, then Ps inner seeds for the +z1 context, then
// the shift sh, then Ps inner seeds for the -z1 context (each + sh, wrapping).
// s2 is laid out as [i][+dir Ps | -dir Ps].
StepSeeds draw_step_seeds(SeedSource& source, const SplitConfig& cfg);

// Tracks a cheap checksum of theta so an estimator can confirm it handed the
// parameters back (up to rounding) without keeping a copy.
template <class T>
class RestorationCheck {
 public:
  RestorationCheck(std::span<const T> theta, double eps) : eps_(std::abs(eps)) {
    sum_ = checksum(theta, &abs_sum_);
  }

  void verify(std::span<const T> theta, const char* where) const {
    double abs_sum = 0.0;
    const double sum = checksum(theta, &abs_sum);
    const double unit = std::numeric_limits<T>::epsilon();
    const double tol =
        8.0 * unit * (abs_sum_ + 2.0 * eps_ * static_cast<double>(theta.size())) + 1e-300;
    if (!(std::abs(sum - sum_) <= tol))
      throw InvariantError(std::string(where) + ": parameters not restored after perturbation cycle");
  }

 private:
  // Neumaier-compensated sum so the check is limited by theta's own
  // rounding, not by the summation.
  static double checksum(std::span<const T> theta, double* abs_sum) {
    double s = 0.0, c = 0.0, a = 0.0;
    for (T v : theta) {
      const double x = static_cast<double>(v);
      const double t = s + x;
      c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
      s = t;
      a += std::abs(x);
    }
    *abs_sum = a;
    return s + c;
  }

  double eps_;
  double sum_ = 0.0;
  double abs_sum_ = 0.0;
};

// g = [L(theta + eps z) - L(theta - eps z)] / (2 eps) through the in-place
// (+eps, -2eps, +eps) cycle. `loss` evaluates the loss at the current
// (perturbed) theta. Restores theta before returning.
template <class T, class LossFn>
T projected_gradient_central(std::span<T> theta, LossFn&& loss, Seed seed, double eps,
                             CostMeter* meter = nullptr, std::uint64_t forward_flops = 0) {
  if (!(eps > 0.0)) throw ContractError("eps must be positive");
  const RestorationCheck<T> check(theta, eps);
  auto perturb = [&](double scale) {
    perturb_in_place(theta, {seed, scale});
    if (meter) meter->perturb_pass(Block::whole, theta.size());
  };
  auto eval = [&]() {
    const T l = loss(std::span<const T>(theta));
    if (meter) meter->forward(Block::whole, forward_flops);
    if (!std::isfinite(l)) throw NumericError("non-finite loss in central difference");
    return l;
  };
  perturb(eps);
  const T plus = eval();
  perturb(-2.0 * eps);
  const T minus = eval();
  perturb(eps);
  check.verify(theta, "projected_gradient_central");
  return (plus - minus) / static_cast<T>(2.0 * eps);
}

// g = [L(theta + eps z) - base_loss] / eps, base_loss = L(theta) computed once
// per step by the caller. Restores theta before returning.
template <class T, class LossFn>
T projected_gradient_forward(std::span<T> theta, LossFn&& loss, Seed seed, double eps, T base_loss,
                             CostMeter* meter = nullptr, std::uint64_t forward_flops = 0) {
  if (!(eps > 0.0)) throw ContractError("eps must be positive");
  if (!std::isfinite(base_loss)) throw NumericError("non-finite base loss");
  const RestorationCheck<T> check(theta, eps);
  perturb_in_place(theta, {seed, eps});
  if (meter) meter->perturb_pass(Block::whole, theta.size());
  const T plus = loss(std::span<const T>(theta));
  if (meter) meter->forward(Block::whole, forward_flops);
  perturb_in_place(theta, {seed, -eps});
  if (meter) meter->perturb_pass(Block::whole, theta.size());
  if (!std::isfinite(plus)) throw NumericError("non-finite loss in forward difference");
  check.verify(theta, "projected_gradient_forward");
  return (plus - base_loss) / static_cast<T>(eps);
}

// Model-driven conveniences over the two estimators above.
template <class T>
T projected_gradient_central(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             Seed seed, double eps, CostMeter* meter = nullptr);

template <class T>
T projected_gradient_forward(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             Seed seed, double eps, T base_loss, CostMeter* meter = nullptr);

// First-block projected gradient from the loss vectors gathered under the
// +z1 and -z1 contexts (2*Ps entries each): the mean over all 4*Ps^2 pairs of
// (Lplus[l] - Lminus[k]) / (2 eps), evaluated as the literal double sum.
template <class T>
T g1_from_losses(std::span<const T> lplus, std::span<const T> lminus, double eps, std::size_t ps);

template <class T>
struct SpzoStepResult {
  T g1 = T{0};  // averaged over P1
  T g2 = T{0};  // averaged over P2
  std::vector<Seed> s1;
  std::vector<Seed> s2;
};

// One split-perturbation gradient estimate. theta1 and theta2 are restored
// on return up to rounding; apply the update with apply_split_update.
template <class T>
SpzoStepResult<T> spzo_step(const SplitModel<T>& model, std::span<T> theta1, std::span<T> theta2,
                            const Batch<T>& batch, const SplitConfig& cfg, SeedSource& seeds,
                            CostMeter* meter = nullptr);

// theta1 with (s1, g1) first, then theta2 with (s2, g2). Client and server
// both go through this.
template <class T>
void apply_split_update(std::span<T> theta1, std::span<T> theta2, T g1, std::span<const Seed> s1,
                        T g2, std::span<const Seed> s2, double lr, CostMeter* meter = nullptr);

// Repeats, without any forward pass, the (+eps, -2eps, +eps) cycles that
// spzo_step runs on each block: every s1 seed on theta1, every s2 seed on
// theta2, in list order. The cycles leave a rounding residue in the
// parameters; replaying them lets the server land on the client's bits.
template <class T>
void replay_perturbation_cycles(std::span<T> theta1, std::span<T> theta2, std::span<const Seed> s1,
                                std::span<const Seed> s2, double eps);

enum class DifferenceKind { central, forward };

template <class T>
struct ZoStepResult {
  std::vector<T> g;  // one projected gradient per perturbation
  std::vector<Seed> seeds;
};

// Whole-model baseline step with P perturbations (MeZO / FedZO style).
template <class T>
ZoStepResult<T> zo_step_full(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             std::size_t p, double eps, DifferenceKind kind, SeedSource& seeds,
                             CostMeter* meter = nullptr);

// theta -= lr * (1/P) * sum_p g_p z_p, one seed pass per perturbation.
template <class T>
void apply_full_update(std::span<T> theta, const ZoStepResult<T>& step, double lr,
                       CostMeter* meter = nullptr);

}  // namespace fedspzo
