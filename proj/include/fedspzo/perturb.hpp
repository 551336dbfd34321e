#pragma once

// In-place Gaussian perturbation and seed-replayed SGD updates. Neither
// routine stores the perturbation vector: z is regenerated element by
// element from the seed, in ascending parameter order.

#include <cstddef>
#include <span>
#include <vector>

#include "fedspzo/rng.hpp"

namespace fedspzo {

struct PerturbationSpec {
  Seed seed = 0;
  double scale = 0.0;  // may be negative; -2*eps flips +eps*z to -eps*z
};

// theta[i] += scale * z[i], z = GaussianStream(seed). A zero scale is a
// no-op (theta bitwise unchanged). Throws NumericError if any result is
// non-finite.
template <class T>
void perturb_in_place(std::span<T> theta, PerturbationSpec spec);

// For each seed in order: theta[i] -= (lr * g) * z[i]. `g` is the projected
// gradient already averaged over the perturbations. Throws ContractError on
// an empty seed list; g == 0 leaves theta bitwise unchanged.
template <class T>
void update_in_place(std::span<T> theta, std::span<const Seed> seeds, double g, double lr);

// First n values of the stream for `seed`; used by tests and the
// conformance vector file.
std::vector<double> gaussian_prefix(Seed seed, std::size_t n);

}  // namespace fedspzo
