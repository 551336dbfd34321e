#include "fedspzo/perturb.hpp"

#include <cmath>
#include <string>

#include "fedspzo/errors.hpp"

namespace fedspzo {

namespace {

template <class T>
[[noreturn]] void non_finite(std::size_t i, Seed seed) {
  throw NumericError("non-finite parameter at index " + std::to_string(i) +
                     " after applying seed " + std::to_string(seed));
}

}  // namespace

template <class T>
void perturb_in_place(std::span<T> theta, PerturbationSpec spec) {
  if (!std::isfinite(spec.scale)) throw NumericError("non-finite perturbation scale");
  if (spec.scale == 0.0) return;
  const T scale = static_cast<T>(spec.scale);
  GaussianStream z(spec.seed);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] += scale * static_cast<T>(z.next());
    if (!std::isfinite(theta[i])) non_finite<T>(i, spec.seed);
  }
}

template <class T>
void update_in_place(std::span<T> theta, std::span<const Seed> seeds, double g, double lr) {
  if (seeds.empty()) throw ContractError("update_in_place: empty seed list");
  if (!std::isfinite(g) || !std::isfinite(lr)) throw NumericError("non-finite gradient or learning rate");
  if (g == 0.0) return;
  const T step = static_cast<T>(lr) * static_cast<T>(g);
  for (Seed seed : seeds) {
    GaussianStream z(seed);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= step * static_cast<T>(z.next());
      if (!std::isfinite(theta[i])) non_finite<T>(i, seed);
    }
  }
}

std::vector<double> gaussian_prefix(Seed seed, std::size_t n) {
  std::vector<double> out(n);
  GaussianStream z(seed);
  for (auto& v : out) v = z.next();
  return out;
}

template void perturb_in_place<float>(std::span<float>, PerturbationSpec);
template void perturb_in_place<double>(std::span<double>, PerturbationSpec);
template void update_in_place<float>(std::span<float>, std::span<const Seed>, double, double);
template void update_in_place<double>(std::span<double>, std::span<const Seed>, double, double);

}  // namespace fedspzo
