#pragma once

// Experiment configuration: a JSON document with fixed keys. Unknown keys
// are rejected, defaults are filled in, and the resolved config can be
// echoed back and re-parsed to the identical value.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedspzo/cost_meter.hpp"
#include "fedspzo/data.hpp"
#include "fedspzo/model.hpp"
#include "fedspzo/payload.hpp"
#include "fedspzo/protocol.hpp"

namespace fedspzo {

struct DataConfig {
  std::string source = "blobs";  // blobs | csv
  std::size_t n = 2000;
  std::size_t dim = 32;
  std::size_t classes = 4;
  double spread = 1.5;
  std::string path;  // csv only
  std::string label_column = "label";
  Seed seed = 1;     // generation, holdout split and partition
  bool standardize = true;
  double test_fraction = 0.2;

  bool operator==(const DataConfig&) const = default;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{128, 4};
  ActivationKind activation = ActivationKind::tanh;
  std::optional<std::size_t> cut;  // default: before the final dense layer

  bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
  Seed master_seed = 0;
  std::size_t rounds = 300;
  std::size_t n_clients = 20;
  double sample_fraction = 0.1;
  std::size_t local_steps = 20;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double eps = 1e-3;
  Method method = Method::fedspzo;
  std::size_t p1 = 2;
  std::size_t p2 = 8;
  std::size_t p = 5;
  ModelConfig model;
  DataConfig data;
  PartitionSpec partition;
  Precision precision = Precision::f64;
  PayloadMode payload_mode = PayloadMode::with_seeds;
  std::size_t eval_every = 10;
  FlopConstants flops;

  std::size_t clients_per_round() const;
  SplitConfig split_config() const;
  FederationConfig federation_config(std::size_t workers) const;
  // Model for a dataset of this config's shape.
  ModelSpec model_spec(std::size_t input_dim, std::size_t num_classes) const;

  // ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

using EnvOverrides = std::map<std::string, std::string>;

// Keys of the form FEDSPZO_<KEY> or FEDSPZO_<SECTION>__<KEY>, matched
// case-insensitively. Values are read as JSON when they parse, otherwise
// as strings.
inline constexpr const char* kEnvPrefix = "FEDSPZO_";
EnvOverrides env_overrides_from_environment();
void apply_env_overrides(nlohmann::json& doc, const EnvOverrides& env);

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_file(const std::filesystem::path& path, const EnvOverrides& env = {});
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace fedspzo
