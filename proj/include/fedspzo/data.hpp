#pragma once

// Desk-scale datasets: Gaussian blobs, comma-separated ingestion, and
// client partitioning (balanced IID or Dirichlet label skew).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedspzo/model.hpp"
#include "fedspzo/rng.hpp"

namespace fedspzo {

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // row-major [n x dim]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }

  // ConfigError unless n >= 1, labels < num_classes and features finite.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;
};

// Balanced Gaussian clusters (class counts differ by at most one). Class
// means are N(0, I) draws from `seed`; samples add spread * N(0, I).
Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t num_classes, double spread, Seed seed);

// Header row required. Every column except `label_column` must be numeric.
// Labels are re-indexed densely from 0 in sorted order (numeric order when
// all labels are integers, lexicographic otherwise).
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);
void write_csv(const std::filesystem::path& path, const Dataset& data,
               const std::string& label_column = "label");

// Zero mean, unit variance per feature, in place. Constant columns are
// only centred.
void standardize(Dataset& data);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

// Per-class holdout of round(test_fraction * n_c) samples.
TrainTestSplit stratified_split(const Dataset& data, double test_fraction, Seed seed);

enum class PartitionScheme { iid, dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::iid;
  double alpha = 0.5;  // Dirichlet concentration
  bool operator==(const PartitionSpec&) const = default;
};

struct PartitionPlan {
  std::vector<std::uint32_t> assignment;  // client id per sample
  std::size_t n_clients = 0;
  PartitionSpec spec;

  std::vector<std::vector<std::size_t>> client_indices() const;
};

// iid: shuffle, then contiguous chunks whose sizes differ by at most one.
// dirichlet: per-class client proportions ~ Dir(alpha), redrawn until every
// client holds at least one sample. ConfigError if infeasible.
PartitionPlan partition(const Dataset& data, std::size_t n_clients, PartitionSpec spec, Seed seed);
std::vector<Dataset> split_by_plan(const Dataset& data, const PartitionPlan& plan);

template <class T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices);

template <class T>
Batch<T> full_batch(const Dataset& data);

// `batch_size` distinct samples (all of them if the dataset is smaller).
template <class T>
Batch<T> sample_batch(const Dataset& data, std::size_t batch_size, Xoshiro256pp& rng);

// Portable samplers used by the data generators.
double standard_normal(Xoshiro256pp& rng);
double gamma_sample(double shape, Xoshiro256pp& rng);

}  // namespace fedspzo
