#pragma once

// Comparison of metrics files from runs on the same task: rounds and
// cumulative forward FLOPs each method needs to reach loss and accuracy
// targets, normalised against a baseline run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedspzo/experiment.hpp"

namespace fedspzo {

struct MetricsSeries {
  std::string label;  // display name, defaults to the method
  std::vector<MetricsRecord> records;

  std::string method() const;
  std::string task() const;
  double best_loss() const;
  double best_acc() const;
};

// One record per line; FormatError with the line number on bad input.
MetricsSeries load_metrics(const std::filesystem::path& path);

struct Reach {
  bool reached = false;
  std::uint32_t round = 0;
  std::uint64_t fw_flops = 0;
};

// First record with loss <= target.
Reach reach_loss(const MetricsSeries& s, double target);
// First record with acc >= target.
Reach reach_acc(const MetricsSeries& s, double target);

struct CompareOptions {
  std::size_t baseline = 0;
  std::vector<double> loss_targets;  // default: the baseline's best loss
  std::vector<double> acc_targets;   // default: 0.9
};

struct CompareRow {
  std::string label;
  std::string method;
  double best_loss = 0.0;
  double best_acc = 0.0;
  std::vector<Reach> loss;  // per loss target
  std::vector<Reach> acc;   // per accuracy target
};

struct CompareReport {
  std::size_t baseline = 0;
  std::vector<double> loss_targets;
  std::vector<double> acc_targets;
  std::vector<CompareRow> rows;

  // FLOPs to reach target t for row i over the baseline's; empty when
  // either run never reached it.
  std::optional<double> loss_flops_ratio(std::size_t row, std::size_t target) const;
  std::optional<double> acc_flops_ratio(std::size_t row, std::size_t target) const;

  std::string to_text() const;
  nlohmann::ordered_json to_json() const;
};

// ConfigError when fewer than two series are given or task fingerprints
// differ.
CompareReport compare_report(const std::vector<MetricsSeries>& series, const CompareOptions& opts = {});

}  // namespace fedspzo
