#pragma once

// Run orchestration: builds the task from a config, drives the federation
// for R rounds, and writes one metrics record per evaluation point.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedspzo/config.hpp"
#include "fedspzo/cost.hpp"
#include "fedspzo/data.hpp"

namespace fedspzo {

struct MetricsRecord {
  std::uint32_t round = 0;  // rounds completed
  double loss = 0.0;        // global model on the held-out split
  double acc = 0.0;
  CostLedger ledger;        // cumulative
  double wall_time = 0.0;   // seconds since the run started
  std::string method;
  std::string task;         // task fingerprint

  bool operator==(const MetricsRecord&) const = default;
};

// Fixed field order: round, loss, acc, fw_flops, perturb_flops,
// update_flops, upload_bytes, download_bytes, peak_mem, method, task,
// wall_time.
nlohmann::ordered_json to_json(const MetricsRecord& r);
MetricsRecord metrics_record_from_json(const nlohmann::json& j);

// Data, holdout split and client shards, all derived from the config.
struct Task {
  Dataset train;
  Dataset test;
  std::vector<Dataset> clients;
  ModelSpec model;
  std::string fingerprint;
};

Task prepare_task(const ExperimentConfig& cfg);

// Hex digest of everything that defines the learning problem (data source,
// holdout, partition, client count). Independent of method and
// hyperparameters, so runs of different methods remain comparable.
std::string task_fingerprint(const ExperimentConfig& cfg);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep results in memory only
  bool force = false;
  std::size_t workers = 1;
  bool dump_payloads = false;
  std::function<void(const MetricsRecord&)> on_record;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  std::vector<std::uint8_t> final_checkpoint;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
};

inline constexpr const char* kConfigEchoFile = "config.json";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kCheckpointFile = "final.fspz";
inline constexpr const char* kPayloadDir = "payloads";

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Protocol invariants on the config's task at reduced scale: split
// identity, reconstruction exactness, payload-mode equivalence, ledger
// against the closed-form cost, payload length.
std::vector<CheckResult> verify_config(const ExperimentConfig& cfg);

}  // namespace fedspzo
