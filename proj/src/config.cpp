#include "fedspzo/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

extern char** environ;

namespace fedspzo {

using nlohmann::json;

namespace {

const std::vector<std::string> kTopKeys = {
    "master_seed", "rounds", "n_clients", "sample_fraction", "local_steps", "batch_size",
    "lr",          "eps",    "method",    "P1",              "P2",          "P",
    "model",       "data",   "partition", "precision",       "payload_mode", "eval_every",
    "flops"};
const std::vector<std::string> kModelKeys = {"hidden", "activation", "cut"};
const std::vector<std::string> kDataKeys = {"source", "n",    "dim",          "classes",    "spread",
                                            "path",   "label_column", "seed", "standardize", "test_fraction"};
const std::vector<std::string> kPartitionKeys = {"scheme", "alpha"};
const std::vector<std::string> kFlopKeys = {"perturb_per_param", "update_per_param"};

const std::vector<std::string>& section_keys(const std::string& section) {
  static const std::vector<std::string> none;
  if (section == "model") return kModelKeys;
  if (section == "data") return kDataKeys;
  if (section == "partition") return kPartitionKeys;
  if (section == "flops") return kFlopKeys;
  return none;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

void reject_unknown(const json& obj, const std::vector<std::string>& allowed, const std::string& prefix) {
  if (!obj.is_object()) fail(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(prefix.empty() ? key : prefix + "." + key, "unknown key");
}

// Typed readers: absent keys keep the default.
template <class T>
void read(const json& obj, const char* key, const std::string& path, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(path, std::string("wrong type (") + e.what() + ")");
  }
}

void read_count(const json& obj, const char* key, const std::string& path, std::size_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) fail(path, "expected a non-negative integer");
  out = v.get<std::size_t>();
}

void read_seed(const json& obj, const char* key, const std::string& path, Seed& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    fail(path, "expected an unsigned 64-bit integer");
  out = v.get<Seed>();
}

void read_number(const json& obj, const char* key, const std::string& path, double& out) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_number()) fail(path, "expected a number");
  out = obj.at(key).get<double>();
}

void require(const json& obj, const char* key, const std::string& why) {
  if (!obj.contains(key)) fail(key, "missing required key (" + why + ")");
}

std::string string_or(const json& obj, const char* key, const std::string& path, std::string dflt) {
  read(obj, key, path, dflt);
  return dflt;
}

}  // namespace

std::size_t ExperimentConfig::clients_per_round() const {
  const auto m = static_cast<std::size_t>(std::llround(sample_fraction * static_cast<double>(n_clients)));
  return std::clamp<std::size_t>(m, 1, n_clients);
}

SplitConfig ExperimentConfig::split_config() const {
  SplitConfig s;
  s.p1 = p1;
  s.p2 = p2;
  s.eps = eps;
  s.lr = lr;
  return s;
}

FederationConfig ExperimentConfig::federation_config(std::size_t workers) const {
  FederationConfig f;
  f.method = method;
  f.split = split_config();
  f.p = p;
  f.local_steps = local_steps;
  f.batch_size = batch_size;
  f.clients_per_round = clients_per_round();
  f.mode = payload_mode;
  f.master_seed = master_seed;
  f.workers = workers;
  f.flops = flops;
  return f;
}

ModelSpec ExperimentConfig::model_spec(std::size_t input_dim, std::size_t num_classes) const {
  return ModelSpec::mlp(input_dim, model.hidden, num_classes, model.activation, model.cut);
}

void ExperimentConfig::validate() const {
  if (rounds < 1) fail("rounds", "must be >= 1");
  if (n_clients < 1) fail("n_clients", "must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) fail("sample_fraction", "must lie in (0, 1]");
  if (local_steps < 1) fail("local_steps", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be positive");
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("eps", "must be positive");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (method == Method::fedspzo) {
    if (p1 < 1) fail("P1", "must be >= 1");
    if (p2 < 2 * p1 || p2 % (2 * p1) != 0)
      fail("P2", "must equal 2*P1*Ps for an integer Ps >= 1 (got P1=" + std::to_string(p1) +
                     ", P2=" + std::to_string(p2) + ")");
  }
  if ((method == Method::central_zo || method == Method::forward_zo) && p < 1) fail("P", "must be >= 1");
  for (std::size_t i = 0; i < model.hidden.size(); ++i)
    if (model.hidden[i] == 0) fail("model.hidden[" + std::to_string(i) + "]", "must be positive");
  if (data.source != "blobs" && data.source != "csv") fail("data.source", "expected blobs or csv");
  if (data.source == "csv" && data.path.empty()) fail("data.path", "required for csv source");
  if (data.source == "blobs") {
    if (data.classes < 2) fail("data.classes", "must be >= 2");
    if (data.dim < 1) fail("data.dim", "must be >= 1");
    if (data.n < data.classes) fail("data.n", "must be >= data.classes");
    if (!(data.spread >= 0.0)) fail("data.spread", "must be >= 0");
  }
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0))
    fail("data.test_fraction", "must lie in (0, 1)");
  if (partition.scheme == PartitionScheme::dirichlet && !(partition.alpha > 0.0))
    fail("partition.alpha", "must be positive");
  if (data.source == "blobs") {
    // Model shape is known up front for generated data; check the cut now.
    try {
      (void)model_spec(data.dim, data.classes);
    } catch (const ConfigError& e) {
      fail("model", e.what());
    }
  }
}

ExperimentConfig parse_config(const json& doc) {
  reject_unknown(doc, kTopKeys, "");
  require(doc, "method", "one of fedspzo, central_zo, forward_zo, fedavg_fo");
  require(doc, "lr", "learning rate");

  ExperimentConfig cfg;
  cfg.method = method_from_string(string_or(doc, "method", "method", "fedspzo"));
  if (cfg.method == Method::fedspzo) {
    require(doc, "P1", "fedspzo needs P1 and P2");
    require(doc, "P2", "fedspzo needs P1 and P2");
  }
  if (cfg.method == Method::central_zo || cfg.method == Method::forward_zo)
    require(doc, "P", "whole-model ZO needs P");

  read_seed(doc, "master_seed", "master_seed", cfg.master_seed);
  read_count(doc, "rounds", "rounds", cfg.rounds);
  read_count(doc, "n_clients", "n_clients", cfg.n_clients);
  read_number(doc, "sample_fraction", "sample_fraction", cfg.sample_fraction);
  read_count(doc, "local_steps", "local_steps", cfg.local_steps);
  read_count(doc, "batch_size", "batch_size", cfg.batch_size);
  read_number(doc, "lr", "lr", cfg.lr);
  read_number(doc, "eps", "eps", cfg.eps);
  read_count(doc, "P1", "P1", cfg.p1);
  read_count(doc, "P2", "P2", cfg.p2);
  read_count(doc, "P", "P", cfg.p);
  read_count(doc, "eval_every", "eval_every", cfg.eval_every);
  cfg.precision = precision_from_string(string_or(doc, "precision", "precision", to_string(cfg.precision)));
  cfg.payload_mode =
      payload_mode_from_string(string_or(doc, "payload_mode", "payload_mode", to_string(cfg.payload_mode)));

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(m, kModelKeys, "model");
    if (m.contains("hidden")) {
      if (!m.at("hidden").is_array()) fail("model.hidden", "expected an array of widths");
      cfg.model.hidden.clear();
      for (std::size_t i = 0; i < m.at("hidden").size(); ++i) {
        const json& w = m.at("hidden")[i];
        if (!w.is_number_integer() || w.get<long long>() <= 0)
          fail("model.hidden[" + std::to_string(i) + "]", "expected a positive integer");
        cfg.model.hidden.push_back(w.get<std::size_t>());
      }
    }
    cfg.model.activation =
        activation_from_string(string_or(m, "activation", "model.activation", to_string(cfg.model.activation)));
    if (m.contains("cut") && !m.at("cut").is_null()) {
      std::size_t cut = 0;
      read_count(m, "cut", "model.cut", cut);
      cfg.model.cut = cut;
    }
  }

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    reject_unknown(d, kDataKeys, "data");
    read(d, "source", "data.source", cfg.data.source);
    read_count(d, "n", "data.n", cfg.data.n);
    read_count(d, "dim", "data.dim", cfg.data.dim);
    read_count(d, "classes", "data.classes", cfg.data.classes);
    read_number(d, "spread", "data.spread", cfg.data.spread);
    read(d, "path", "data.path", cfg.data.path);
    read(d, "label_column", "data.label_column", cfg.data.label_column);
    read_seed(d, "seed", "data.seed", cfg.data.seed);
    read(d, "standardize", "data.standardize", cfg.data.standardize);
    read_number(d, "test_fraction", "data.test_fraction", cfg.data.test_fraction);
  }

  if (doc.contains("partition")) {
    const json& p = doc.at("partition");
    reject_unknown(p, kPartitionKeys, "partition");
    const std::string scheme = string_or(p, "scheme", "partition.scheme", "iid");
    if (scheme == "iid")
      cfg.partition.scheme = PartitionScheme::iid;
    else if (scheme == "dirichlet")
      cfg.partition.scheme = PartitionScheme::dirichlet;
    else
      fail("partition.scheme", "expected iid or dirichlet");
    read_number(p, "alpha", "partition.alpha", cfg.partition.alpha);
  }

  if (doc.contains("flops")) {
    const json& f = doc.at("flops");
    reject_unknown(f, kFlopKeys, "flops");
    std::size_t p = cfg.flops.perturb_per_param, u = cfg.flops.update_per_param;
    read_count(f, "perturb_per_param", "flops.perturb_per_param", p);
    read_count(f, "update_per_param", "flops.update_per_param", u);
    cfg.flops.perturb_per_param = p;
    cfg.flops.update_per_param = u;
  }

  cfg.validate();
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["master_seed"] = cfg.master_seed;
  j["rounds"] = cfg.rounds;
  j["n_clients"] = cfg.n_clients;
  j["sample_fraction"] = cfg.sample_fraction;
  j["local_steps"] = cfg.local_steps;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["eps"] = cfg.eps;
  j["method"] = to_string(cfg.method);
  j["P1"] = cfg.p1;
  j["P2"] = cfg.p2;
  j["P"] = cfg.p;
  j["precision"] = to_string(cfg.precision);
  j["payload_mode"] = to_string(cfg.payload_mode);
  j["eval_every"] = cfg.eval_every;
  j["model"] = {{"hidden", cfg.model.hidden}, {"activation", to_string(cfg.model.activation)}};
  j["model"]["cut"] = cfg.model.cut ? json(*cfg.model.cut) : json(nullptr);
  j["data"] = {{"source", cfg.data.source},
               {"n", cfg.data.n},
               {"dim", cfg.data.dim},
               {"classes", cfg.data.classes},
               {"spread", cfg.data.spread},
               {"path", cfg.data.path},
               {"label_column", cfg.data.label_column},
               {"seed", cfg.data.seed},
               {"standardize", cfg.data.standardize},
               {"test_fraction", cfg.data.test_fraction}};
  j["partition"] = {{"scheme", cfg.partition.scheme == PartitionScheme::iid ? "iid" : "dirichlet"},
                    {"alpha", cfg.partition.alpha}};
  j["flops"] = {{"perturb_per_param", cfg.flops.perturb_per_param},
                {"update_per_param", cfg.flops.update_per_param}};
  return j;
}

EnvOverrides env_overrides_from_environment() {
  EnvOverrides out;
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

void apply_env_overrides(json& doc, const EnvOverrides& env) {
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, raw] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string path = name.substr(prefix.size());
    const auto sep = path.find("__");
    const std::string section = sep == std::string::npos ? "" : lower(path.substr(0, sep));
    const std::string key = lower(sep == std::string::npos ? path : path.substr(sep + 2));

    const std::vector<std::string>& allowed = section.empty() ? kTopKeys : section_keys(section);
    if (!section.empty() && (allowed.empty() || std::find(kTopKeys.begin(), kTopKeys.end(), section) == kTopKeys.end()))
      fail(name, "unknown config section '" + section + "'");
    const auto match = std::find_if(allowed.begin(), allowed.end(),
                                    [&](const std::string& k) { return lower(k) == key; });
    if (match == allowed.end()) fail(name, "does not name a config key");

    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    if (section.empty()) {
      doc[*match] = value;
    } else {
      if (!doc.contains(section)) doc[section] = json::object();
      doc[section][*match] = value;
    }
  }
}

ExperimentConfig parse_config_file(const std::filesystem::path& path, const EnvOverrides& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  apply_env_overrides(doc, env);
  return parse_config(doc);
}

}  // namespace fedspzo
