#include "fedspzo/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedspzo/errors.hpp"
#include "fedspzo/protocol.hpp"

namespace fedspzo {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kInitTag = 0x1a17;
constexpr std::uint64_t kSplitTag = 0x7e57;
constexpr std::uint64_t kPartitionTag = 0x9a27;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force)
        throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
      for (const char* name : {kConfigEchoFile, kMetricsFile, kCheckpointFile, kPayloadDir})
        fs::remove_all(dir / name);
    }
  }
  fs::create_directories(dir);
}

template <class T>
RunResult run_typed(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const Task task = prepare_task(cfg);
  const Mlp<T> model(task.model);
  ParamVector<T> theta0 = model.init_params(derive_seed(cfg.master_seed, {kInitTag}));
  Federation<T> fed(model, task.clients, std::move(theta0), cfg.federation_config(opts.workers));
  const Batch<T> test = full_batch<T>(task.test);

  RunResult result;
  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    prepare_out_dir(opts.out_dir, opts.force);
    std::ofstream echo(opts.out_dir / kConfigEchoFile);
    echo << to_json(cfg).dump(2) << '\n';
    if (!echo) throw std::runtime_error("cannot write config echo in " + opts.out_dir.string());
    result.metrics_path = opts.out_dir / kMetricsFile;
    metrics.open(result.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open " + result.metrics_path.string());
    if (opts.dump_payloads) fs::create_directories(opts.out_dir / kPayloadDir);
  }

  auto emit = [&](std::uint32_t round) {
    const EvalResult e = model.evaluate(fed.global().values(), test);
    MetricsRecord rec;
    rec.round = round;
    rec.loss = e.loss;
    rec.acc = e.accuracy;
    rec.ledger = fed.ledger();
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.method = to_string(cfg.method);
    rec.task = task.fingerprint;
    if (metrics.is_open()) {
      metrics << to_json(rec).dump() << '\n';
      metrics.flush();
    }
    if (opts.on_record) opts.on_record(rec);
    result.records.push_back(std::move(rec));
  };

  emit(0);
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const auto round_id = static_cast<std::uint32_t>(r - 1);
    RoundReport report;
    try {
      report = fed.run_round(fed.plan_round(round_id));
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(round_id) + ": " + e.what(), e.layer());
    } catch (const InvariantError& e) {
      throw InvariantError("round " + std::to_string(round_id) + ": " + e.what());
    }
    if (opts.dump_payloads && !opts.out_dir.empty()) {
      for (std::size_t i = 0; i < report.payloads.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "round%05u_client%05u.fspb", round_id, report.clients[i]);
        write_file_bytes(opts.out_dir / kPayloadDir / name, report.payloads[i]);
      }
    }
    if (r % cfg.eval_every == 0 || r == cfg.rounds) emit(static_cast<std::uint32_t>(r));
  }

  result.final_checkpoint = encode_checkpoint(fed.global(), static_cast<std::uint32_t>(task.model.cut));
  if (!opts.out_dir.empty()) {
    result.checkpoint_path = opts.out_dir / kCheckpointFile;
    write_file_bytes(result.checkpoint_path, result.final_checkpoint);
  }
  return result;
}

template <class T>
std::vector<CheckResult> verify_typed(const ExperimentConfig& cfg) {
  std::vector<CheckResult> out;
  const Task task = prepare_task(cfg);
  const Mlp<T> model(task.model);
  const ParamVector<T> theta = model.init_params(derive_seed(cfg.master_seed, {kInitTag}));
  const BlockSplit split = model.split();
  const SplitConfig scfg = cfg.split_config();
  const std::size_t k = std::min<std::size_t>(cfg.local_steps, 5);

  auto run_check = [&](const std::string& name, auto&& body) {
    CheckResult c{name, false, ""};
    try {
      c.detail = body(c.passed);
    } catch (const std::exception& e) {
      c.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(c));
  };

  run_check("split-forward identity", [&](bool& ok) {
    Xoshiro256pp rng(derive_seed(cfg.master_seed, {0x1d}));
    std::size_t bad = 0;
    const std::size_t trials = 10;
    for (std::size_t t = 0; t < trials; ++t) {
      const Batch<T> b = sample_batch<T>(task.train, std::min(cfg.batch_size, task.train.size()), rng);
      const T whole = model.forward_loss(theta.values(), b);
      const Matrix<T> y = model.forward_block1(theta.block1(split), b.inputs);
      const T composed = model.forward_block2(theta.block2(split), y, b.labels);
      if (std::memcmp(&whole, &composed, sizeof(T)) != 0) ++bad;
    }
    ok = bad == 0;
    return std::to_string(trials - bad) + "/" + std::to_string(trials) + " batches bitwise equal";
  });

  if (cfg.method != Method::fedspzo) {
    out.push_back({"protocol checks", true, "skipped: method " + to_string(cfg.method) + " uploads full models"});
    return out;
  }

  ClientTrainOptions base;
  base.client_id = 0;
  base.round_id = 0;
  base.root_seed = client_root_seed(cfg.master_seed, 0, 0);
  base.batch_seed = client_batch_seed(cfg.master_seed, 0, 0);
  base.batch_size = cfg.batch_size;
  base.flops = cfg.flops;

  run_check("reconstruction exactness", [&](bool& ok) {
    std::string detail;
    ok = true;
    for (PayloadMode mode : {PayloadMode::with_seeds, PayloadMode::scalars_only}) {
      ClientTrainOptions o = base;
      o.mode = mode;
      const ClientResult<T> cr = client_train(model, theta, scfg, k, task.clients[0], o);
      const ClientPayload decoded = decode_payload(encode_payload(cr.payload));
      const ParamVector<T> rebuilt = reconstruct(theta, decoded, split, scfg);
      const bool same = bitwise_equal(rebuilt, cr.final_params);
      ok = ok && same;
      detail += to_string(mode) + (same ? " ok; " : " MISMATCH; ");
    }
    return detail;
  });

  run_check("payload-mode equivalence", [&](bool& ok) {
    ClientTrainOptions a = base, b = base;
    a.mode = PayloadMode::with_seeds;
    b.mode = PayloadMode::scalars_only;
    const ClientResult<T> ra = client_train(model, theta, scfg, k, task.clients[0], a);
    const ClientResult<T> rb = client_train(model, theta, scfg, k, task.clients[0], b);
    ok = bitwise_equal(ra.final_params, rb.final_params);
    return std::string(ok ? "identical" : "differ") + " final parameters after " + std::to_string(k) + " steps";
  });

  run_check("ledger vs cost formula", [&](bool& ok) {
    ClientTrainOptions o = base;
    const ClientResult<T> cr = client_train(model, theta, scfg, k, task.clients[0], o);
    const std::size_t bs = std::min(cfg.batch_size, task.clients[0].size());
    const FlopBreakdown step = zo_step_cost_split(scfg, CostModelParams::for_model(task.model, bs, cfg.flops));
    const auto kk = static_cast<std::uint64_t>(k);
    ok = cr.counters.fw_flops == kk * step.forward && cr.counters.perturb_flops == kk * step.perturb &&
         cr.counters.update_flops == kk * step.update;
    return "counted " + std::to_string(cr.counters.total_flops()) + " vs formula " +
           std::to_string(kk * step.total());
  });

  run_check("payload length", [&](bool& ok) {
    std::string detail;
    ok = true;
    for (PayloadMode mode : {PayloadMode::with_seeds, PayloadMode::scalars_only}) {
      ClientTrainOptions o = base;
      o.mode = mode;
      const ClientResult<T> cr = client_train(model, theta, scfg, k, task.clients[0], o);
      const std::size_t got = encode_payload(cr.payload).size();
      const std::size_t want = payload_bytes(k, scfg.p1, scfg.p2, mode);
      ok = ok && got == want;
      detail += to_string(mode) + " " + std::to_string(got) + "/" + std::to_string(want) + " bytes; ";
    }
    return detail;
  });

  return out;
}

}  // namespace

ordered_json to_json(const MetricsRecord& r) {
  ordered_json j;
  j["round"] = r.round;
  j["loss"] = r.loss;
  j["acc"] = r.acc;
  j["fw_flops"] = r.ledger.fw_flops;
  j["perturb_flops"] = r.ledger.perturb_flops;
  j["update_flops"] = r.ledger.update_flops;
  j["upload_bytes"] = r.ledger.upload_bytes;
  j["download_bytes"] = r.ledger.download_bytes;
  j["peak_mem"] = r.ledger.peak_memory_bytes;
  j["method"] = r.method;
  j["task"] = r.task;
  j["wall_time"] = r.wall_time;
  return j;
}

MetricsRecord metrics_record_from_json(const json& j) {
  MetricsRecord r;
  try {
    r.round = j.at("round").get<std::uint32_t>();
    r.loss = j.at("loss").get<double>();
    r.acc = j.at("acc").get<double>();
    r.ledger.fw_flops = j.at("fw_flops").get<std::uint64_t>();
    r.ledger.perturb_flops = j.at("perturb_flops").get<std::uint64_t>();
    r.ledger.update_flops = j.at("update_flops").get<std::uint64_t>();
    r.ledger.upload_bytes = j.at("upload_bytes").get<std::uint64_t>();
    r.ledger.download_bytes = j.at("download_bytes").get<std::uint64_t>();
    r.ledger.peak_memory_bytes = j.at("peak_mem").get<std::uint64_t>();
    r.method = j.at("method").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.wall_time = j.value("wall_time", 0.0);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad metrics record: ") + e.what());
  }
  return r;
}

std::string task_fingerprint(const ExperimentConfig& cfg) {
  const json canon = {{"data", to_json(cfg)["data"]},
                      {"partition", to_json(cfg)["partition"]},
                      {"n_clients", cfg.n_clients}};
  std::uint64_t h = fnv1a(canon.dump());
  if (cfg.data.source == "csv") {
    const auto bytes = read_file_bytes(cfg.data.path);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
  }
  return hex64(h);
}

Task prepare_task(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset all = cfg.data.source == "csv"
                    ? load_csv(cfg.data.path, cfg.data.label_column)
                    : make_blobs(cfg.data.n, cfg.data.dim, cfg.data.classes, cfg.data.spread, cfg.data.seed);
  if (cfg.data.standardize) standardize(all);
  TrainTestSplit tts = stratified_split(all, cfg.data.test_fraction, derive_seed(cfg.data.seed, {kSplitTag}));
  if (tts.train.size() < cfg.n_clients)
    throw ConfigError("n_clients: " + std::to_string(cfg.n_clients) + " clients but only " +
                      std::to_string(tts.train.size()) + " training samples");
  const PartitionPlan plan =
      partition(tts.train, cfg.n_clients, cfg.partition, derive_seed(cfg.data.seed, {kPartitionTag}));

  Task task;
  task.clients = split_by_plan(tts.train, plan);
  try {
    task.model = cfg.model_spec(all.dim, all.num_classes);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  task.train = std::move(tts.train);
  task.test = std::move(tts.test);
  task.fingerprint = task_fingerprint(cfg);
  return task;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return cfg.precision == Precision::f32 ? run_typed<float>(cfg, opts) : run_typed<double>(cfg, opts);
}

std::vector<CheckResult> verify_config(const ExperimentConfig& cfg) {
  cfg.validate();
  return cfg.precision == Precision::f32 ? verify_typed<float>(cfg) : verify_typed<double>(cfg);
}

}  // namespace fedspzo
