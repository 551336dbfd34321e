#include <gtest/gtest.h>

#include <fstream>

#include "fedspzo/config.hpp"
#include "fedspzo/errors.hpp"
#include "fedspzo/experiment.hpp"
#include "fedspzo/model.hpp"

using namespace fedspzo;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small(Method method = Method::fedspzo) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.master_seed = 5;
  cfg.rounds = 12;
  cfg.n_clients = 6;
  cfg.sample_fraction = 0.34;
  cfg.local_steps = 4;
  cfg.batch_size = 8;
  cfg.lr = 0.01;
  cfg.p = 3;
  cfg.model.hidden = {16, 4};
  cfg.data.n = 400;
  cfg.data.dim = 8;
  cfg.data.classes = 3;
  cfg.data.spread = 1.0;
  cfg.eval_every = 4;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

void expect_same_modulo_time(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    MetricsRecord x = a[i], y = b[i];
    x.wall_time = y.wall_time = 0.0;
    EXPECT_EQ(x, y) << "record " << i;
  }
}

}  // namespace

TEST(Experiment, RecordsAtScheduledRounds) {
  const RunResult r = run_experiment(small(), {});
  std::vector<std::uint32_t> rounds;
  for (const auto& rec : r.records) rounds.push_back(rec.round);
  EXPECT_EQ(rounds, (std::vector<std::uint32_t>{0, 4, 8, 12}));
  for (std::size_t i = 1; i < r.records.size(); ++i)
    EXPECT_TRUE(r.records[i].ledger.monotone_since(r.records[i - 1].ledger));
  EXPECT_EQ(r.records[0].ledger.fw_flops, 0u);
  EXPECT_EQ(r.records[0].method, "fedspzo");
  EXPECT_EQ(r.records[0].task, task_fingerprint(small()));
}

TEST(Experiment, SameConfigSameRecords) {
  for (Method m : {Method::fedspzo, Method::forward_zo, Method::fedavg_fo}) {
    const RunResult a = run_experiment(small(m), {});
    RunOptions threaded;
    threaded.workers = 2;
    const RunResult b = run_experiment(small(m), threaded);
    expect_same_modulo_time(a.records, b.records);
    EXPECT_EQ(a.final_checkpoint, b.final_checkpoint) << to_string(m);
  }
}

TEST(Experiment, PayloadModesLeaveTheModelUnchanged) {
  ExperimentConfig a = small(), b = small();
  a.payload_mode = PayloadMode::with_seeds;
  b.payload_mode = PayloadMode::scalars_only;
  const RunResult ra = run_experiment(a, {}), rb = run_experiment(b, {});
  EXPECT_EQ(ra.final_checkpoint, rb.final_checkpoint);
  EXPECT_LT(rb.records.back().ledger.upload_bytes, ra.records.back().ledger.upload_bytes);
  EXPECT_EQ(ra.records.back().loss, rb.records.back().loss);
}

TEST(Experiment, WritesOutputsAndRefusesToOverwrite) {
  const fs::path dir = fresh_dir("fedspzo_experiment_out");
  RunOptions opts;
  opts.out_dir = dir;
  opts.dump_payloads = true;
  const RunResult r = run_experiment(small(), opts);
  EXPECT_TRUE(fs::exists(dir / kConfigEchoFile));
  EXPECT_TRUE(fs::exists(dir / kMetricsFile));
  EXPECT_TRUE(fs::exists(dir / kCheckpointFile));
  EXPECT_EQ(r.metrics_path, dir / kMetricsFile);

  std::size_t dumps = 0;
  for (const auto& e : fs::directory_iterator(dir / kPayloadDir)) {
    ++dumps;
    std::ifstream in(e.path(), std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(decode_payload(bytes).k(), small().local_steps);
  }
  EXPECT_EQ(dumps, small().rounds * small().clients_per_round());

  std::ifstream ck(dir / kCheckpointFile, std::ios::binary);
  const std::vector<std::uint8_t> on_disk((std::istreambuf_iterator<char>(ck)), {});
  EXPECT_EQ(on_disk, r.final_checkpoint);

  std::ifstream echo(dir / kConfigEchoFile);
  EXPECT_EQ(parse_config(nlohmann::json::parse(echo)), small());

  opts.dump_payloads = false;
  EXPECT_THROW(run_experiment(small(), opts), ConfigError);
  opts.force = true;
  const RunResult again = run_experiment(small(), opts);
  EXPECT_EQ(again.final_checkpoint, r.final_checkpoint);
  EXPECT_FALSE(fs::exists(dir / kPayloadDir));
  fs::remove_all(dir);
}

TEST(Experiment, SinglePrecisionRuns) {
  ExperimentConfig cfg = small();
  cfg.precision = Precision::f32;
  const RunResult r = run_experiment(cfg, {});
  EXPECT_LT(r.records.back().loss, r.records.front().loss);
  EXPECT_EQ(r.records.back().ledger.download_bytes % sizeof(float), 0u);
}

TEST(Experiment, FirstOrderBaselineLearnsBlobsQuickly) {
  ExperimentConfig cfg = small(Method::fedavg_fo);
  cfg.n_clients = 20;
  cfg.sample_fraction = 0.1;
  cfg.local_steps = 20;
  cfg.rounds = 50;
  cfg.eval_every = 1;
  cfg.lr = 0.05;
  cfg.model.hidden = {32, 4};
  cfg.data.n = 2000;
  cfg.data.dim = 32;
  cfg.data.classes = 4;
  cfg.data.spread = 1.5;
  const RunResult r = run_experiment(cfg, {});
  double best = 0.0;
  for (const auto& rec : r.records) best = std::max(best, rec.acc);
  EXPECT_GE(best, 0.95);
}

TEST(Experiment, VerifyChecksPass) {
  for (auto mode : {PayloadMode::with_seeds, PayloadMode::scalars_only}) {
    ExperimentConfig cfg = small();
    cfg.payload_mode = mode;
    for (const auto& c : verify_config(cfg)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  }
}

TEST(Experiment, MetricsRecordJsonRoundTrip) {
  MetricsRecord r;
  r.round = 7;
  r.loss = 0.123456789012345;
  r.acc = 0.75;
  r.ledger.fw_flops = 1ull << 40;
  r.ledger.upload_bytes = 99;
  r.wall_time = 1.5;
  r.method = "forward_zo";
  r.task = "deadbeef";
  EXPECT_EQ(metrics_record_from_json(to_json(r)), r);
  const auto j = to_json(r);
  EXPECT_EQ(j.begin().key(), "round");
  EXPECT_THROW(metrics_record_from_json(nlohmann::json{{"round", 1}}), FormatError);
}

TEST(Experiment, FingerprintTracksTheTask) {
  ExperimentConfig a = small(), b = small(Method::forward_zo);
  b.lr = 0.5;
  EXPECT_EQ(task_fingerprint(a), task_fingerprint(b));
  b.data.seed = 2;
  EXPECT_NE(task_fingerprint(a), task_fingerprint(b));
}
