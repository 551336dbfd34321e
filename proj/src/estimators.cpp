#include "fedspzo/estimators.hpp"

#include <string>

namespace fedspzo {

void SplitConfig::validate() const {
  if (p1 < 1) throw ConfigError("P1 must be >= 1");
  if (p2 < 2 * p1 || p2 % (2 * p1) != 0)
    throw ConfigError("P2 (" + std::to_string(p2) + ") must equal 2*P1*Ps with integer Ps >= 1 (P1 = " +
                      std::to_string(p1) + ")");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("eps must be positive and finite");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive and finite");
}

StepSeeds draw_step_seeds(SeedSource& source, const SplitConfig& cfg) {
  const std::size_t ps = cfg.ps();
  StepSeeds out;
  out.s1.reserve(cfg.p1);
  out.s2.reserve(cfg.p2);
  for (std::size_t i = 0; i < cfg.p1; ++i) {
    out.s1.push_back(source.next());
    for (std::size_t j = 0; j < ps; ++j) out.s2.push_back(source.next());
    const Seed shift = source.next();
    for (std::size_t j = 0; j < ps; ++j) out.s2.push_back(source.next() + shift);
  }
  return out;
}

template <class T>
T projected_gradient_central(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             Seed seed, double eps, CostMeter* meter) {
  const std::uint64_t fw = model.block1_flops(batch.size()) + model.block2_flops(batch.size());
  return projected_gradient_central(
      theta, [&](std::span<const T> t) { return model.forward_loss(t, batch); }, seed, eps, meter, fw);
}

template <class T>
T projected_gradient_forward(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             Seed seed, double eps, T base_loss, CostMeter* meter) {
  const std::uint64_t fw = model.block1_flops(batch.size()) + model.block2_flops(batch.size());
  return projected_gradient_forward(
      theta, [&](std::span<const T> t) { return model.forward_loss(t, batch); }, seed, eps, base_loss,
      meter, fw);
}

template <class T>
T g1_from_losses(std::span<const T> lplus, std::span<const T> lminus, double eps, std::size_t ps) {
  if (lplus.size() != 2 * ps || lminus.size() != 2 * ps)
    throw ContractError("loss vectors must hold 2*Ps = " + std::to_string(2 * ps) + " entries");
  if (ps == 0) throw ContractError("Ps must be >= 1");
  const T two_eps = static_cast<T>(2.0 * eps);
  T sum = T{0};
  for (std::size_t k = 0; k < 2 * ps; ++k)
    for (std::size_t l = 0; l < 2 * ps; ++l) sum += (lplus[l] - lminus[k]) / two_eps;
  return sum / static_cast<T>(4 * ps * ps);
}

template <class T>
SpzoStepResult<T> spzo_step(const SplitModel<T>& model, std::span<T> theta1, std::span<T> theta2,
                            const Batch<T>& batch, const SplitConfig& cfg, SeedSource& seeds,
                            CostMeter* meter) {
  cfg.validate();
  const BlockSplit split = model.split();
  if (theta1.size() != split.d1 || theta2.size() != split.d2)
    throw ConfigError("block sizes do not match the model split");

  const std::size_t ps = cfg.ps();
  const double eps = cfg.eps;
  const T two_eps = static_cast<T>(2.0 * eps);
  const std::uint64_t fw1 = model.block1_flops(batch.size());
  const std::uint64_t fw2 = model.block2_flops(batch.size());

  const StepSeeds drawn = draw_step_seeds(seeds, cfg);
  const RestorationCheck<T> check1(theta1, eps);
  const RestorationCheck<T> check2(theta2, eps);

  auto perturb = [&](std::span<T> theta, Block b, Seed s, double scale) {
    perturb_in_place(theta, {s, scale});
    if (meter) meter->perturb_pass(b, theta.size());
  };

  std::vector<T> lplus(2 * ps), lminus(2 * ps);
  T g1_sum = T{0};
  T g2_sum = T{0};

  // One f1 evaluation under the current theta1 direction, then Ps central
  // cycles on theta2 against the cached activation.
  auto inner = [&](std::span<const Seed> inner_seeds, std::vector<T>& losses) {
    const Matrix<T> y = model.forward_block1(std::span<const T>(theta1), batch.inputs);
    if (meter) meter->forward(Block::first, fw1);
    auto f2 = [&]() {
      const T l = model.forward_block2(std::span<const T>(theta2), y, batch.labels);
      if (meter) meter->forward(Block::second, fw2);
      if (!std::isfinite(l)) throw NumericError("non-finite block-2 loss");
      return l;
    };
    for (std::size_t j = 0; j < ps; ++j) {
      const Seed s2 = inner_seeds[j];
      perturb(theta2, Block::second, s2, eps);
      const T plus = f2();
      perturb(theta2, Block::second, s2, -2.0 * eps);
      const T minus = f2();
      g2_sum += (plus - minus) / two_eps;
      perturb(theta2, Block::second, s2, eps);
      losses[2 * j] = plus;
      losses[2 * j + 1] = minus;
    }
  };

  for (std::size_t i = 0; i < cfg.p1; ++i) {
    const Seed s1 = drawn.s1[i];
    const std::span<const Seed> block(drawn.s2.data() + i * 2 * ps, 2 * ps);
    perturb(theta1, Block::first, s1, eps);
    inner(block.first(ps), lplus);
    perturb(theta1, Block::first, s1, -2.0 * eps);
    inner(block.subspan(ps), lminus);
    perturb(theta1, Block::first, s1, eps);
    g1_sum += g1_from_losses<T>(lplus, lminus, eps, ps);
  }

  check1.verify(theta1, "spzo_step(theta1)");
  check2.verify(theta2, "spzo_step(theta2)");

  SpzoStepResult<T> out;
  out.g1 = g1_sum / static_cast<T>(cfg.p1);
  out.g2 = g2_sum / static_cast<T>(cfg.p2);
  out.s1 = drawn.s1;
  out.s2 = drawn.s2;
  return out;
}

template <class T>
void apply_split_update(std::span<T> theta1, std::span<T> theta2, T g1, std::span<const Seed> s1,
                        T g2, std::span<const Seed> s2, double lr, CostMeter* meter) {
  update_in_place(theta1, s1, static_cast<double>(g1), lr);
  if (meter)
    for (std::size_t i = 0; i < s1.size(); ++i) meter->update_pass(Block::first, theta1.size());
  update_in_place(theta2, s2, static_cast<double>(g2), lr);
  if (meter)
    for (std::size_t i = 0; i < s2.size(); ++i) meter->update_pass(Block::second, theta2.size());
}

template <class T>
void replay_perturbation_cycles(std::span<T> theta1, std::span<T> theta2, std::span<const Seed> s1,
                                std::span<const Seed> s2, double eps) {
  auto cycle = [eps](std::span<T> theta, Seed s) {
    perturb_in_place(theta, {s, eps});
    perturb_in_place(theta, {s, -2.0 * eps});
    perturb_in_place(theta, {s, eps});
  };
  for (Seed s : s1) cycle(theta1, s);
  for (Seed s : s2) cycle(theta2, s);
}

template <class T>
ZoStepResult<T> zo_step_full(const SplitModel<T>& model, std::span<T> theta, const Batch<T>& batch,
                             std::size_t p, double eps, DifferenceKind kind, SeedSource& seeds,
                             CostMeter* meter) {
  if (p < 1) throw ConfigError("P must be >= 1");
  ZoStepResult<T> out;
  out.g.reserve(p);
  out.seeds.reserve(p);
  T base_loss = T{0};
  if (kind == DifferenceKind::forward) {
    base_loss = model.forward_loss(std::span<const T>(theta), batch);
    if (meter)
      meter->forward(Block::whole, model.block1_flops(batch.size()) + model.block2_flops(batch.size()));
  }
  for (std::size_t k = 0; k < p; ++k) {
    const Seed s = seeds.next();
    out.seeds.push_back(s);
    out.g.push_back(kind == DifferenceKind::central
                        ? projected_gradient_central(model, theta, batch, s, eps, meter)
                        : projected_gradient_forward(model, theta, batch, s, eps, base_loss, meter));
  }
  return out;
}

template <class T>
void apply_full_update(std::span<T> theta, const ZoStepResult<T>& step, double lr, CostMeter* meter) {
  const T p = static_cast<T>(step.g.size());
  for (std::size_t k = 0; k < step.g.size(); ++k) {
    update_in_place(theta, std::span<const Seed>(&step.seeds[k], 1),
                    static_cast<double>(step.g[k] / p), lr);
    if (meter) meter->update_pass(Block::whole, theta.size());
  }
}

#define FEDSPZO_INSTANTIATE(T)                                                                     \
  template T projected_gradient_central(const SplitModel<T>&, std::span<T>, const Batch<T>&, Seed, \
                                        double, CostMeter*);                                       \
  template T projected_gradient_forward(const SplitModel<T>&, std::span<T>, const Batch<T>&, Seed, \
                                        double, T, CostMeter*);                                    \
  template T g1_from_losses(std::span<const T>, std::span<const T>, double, std::size_t);          \
  template SpzoStepResult<T> spzo_step(const SplitModel<T>&, std::span<T>, std::span<T>,           \
                                       const Batch<T>&, const SplitConfig&, SeedSource&,           \
                                       CostMeter*);                                                \
  template void apply_split_update(std::span<T>, std::span<T>, T, std::span<const Seed>, T,        \
                                   std::span<const Seed>, double, CostMeter*);                     \
  template void replay_perturbation_cycles(std::span<T>, std::span<T>, std::span<const Seed>,      \
                                           std::span<const Seed>, double);                         \
  template ZoStepResult<T> zo_step_full(const SplitModel<T>&, std::span<T>, const Batch<T>&,       \
                                        std::size_t, double, DifferenceKind, SeedSource&,          \
                                        CostMeter*);                                               \
  template void apply_full_update(std::span<T>, const ZoStepResult<T>&, double, CostMeter*);

FEDSPZO_INSTANTIATE(float)
FEDSPZO_INSTANTIATE(double)
#undef FEDSPZO_INSTANTIATE

}  // namespace fedspzo
