// fedspzo: run, compare, inspect-payload, verify.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedspzo/config.hpp"
#include "fedspzo/errors.hpp"
#include "fedspzo/experiment.hpp"
#include "fedspzo/model.hpp"
#include "fedspzo/payload.hpp"
#include "fedspzo/report.hpp"

namespace {

using namespace fedspzo;

int cmd_run(const std::string& config, const std::string& out, bool force, std::size_t workers,
            bool dump_payloads, bool quiet) {
  const ExperimentConfig cfg = parse_config_file(config, env_overrides_from_environment());
  RunOptions opts;
  opts.out_dir = out;
  opts.force = force;
  opts.workers = workers;
  opts.dump_payloads = dump_payloads;
  if (!quiet) {
    opts.on_record = [](const MetricsRecord& r) {
      std::printf("round %5u  loss %.6f  acc %.4f  fw_flops %llu  upload %llu B  (%.1fs)\n", r.round, r.loss,
                  r.acc, static_cast<unsigned long long>(r.ledger.fw_flops),
                  static_cast<unsigned long long>(r.ledger.upload_bytes), r.wall_time);
      std::fflush(stdout);
    };
  }
  const RunResult res = run_experiment(cfg, opts);
  std::printf("metrics: %s\ncheckpoint: %s\n", res.metrics_path.c_str(), res.checkpoint_path.c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& files, const std::vector<std::string>& labels,
                std::size_t baseline, const std::vector<double>& loss_targets,
                const std::vector<double>& acc_targets, bool as_json) {
  std::vector<MetricsSeries> series;
  for (std::size_t i = 0; i < files.size(); ++i) {
    series.push_back(load_metrics(files[i]));
    if (i < labels.size()) series.back().label = labels[i];
  }
  CompareOptions opts;
  opts.baseline = baseline;
  opts.loss_targets = loss_targets;
  opts.acc_targets = acc_targets;
  const CompareReport rep = compare_report(series, opts);
  if (as_json)
    std::cout << rep.to_json().dump(2) << '\n';
  else
    std::cout << rep.to_text();
  return 0;
}

int cmd_inspect(const std::string& file) {
  const auto bytes = read_file_bytes(file);
  std::cout << describe_payload(bytes);
  return 0;
}

int cmd_verify(const std::string& config) {
  ExperimentConfig cfg = parse_config_file(config, env_overrides_from_environment());
  bool all = true;
  for (const auto& c : verify_config(cfg)) {
    std::printf("%s  %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    all = all && c.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated split-perturbation zero-order training"};
  app.require_subcommand(1);

  std::string config, out, payload_file;
  bool force = false, dump_payloads = false, quiet = false, as_json = false;
  std::size_t workers = 1, baseline = 0;
  std::vector<std::string> files, labels;
  std::vector<double> loss_targets, acc_targets;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics and a checkpoint");
  run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--force", force, "Overwrite an existing output directory");
  run->add_option("--workers", workers, "Client worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--dump-payloads", dump_payloads, "Write every client payload under payloads/");
  run->add_flag("--quiet", quiet, "No per-evaluation progress lines");

  auto* cmp = app.add_subcommand("compare", "Compare metrics files from the same task");
  cmp->add_option("files", files, "metrics.jsonl files")->required()->check(CLI::ExistingFile);
  cmp->add_option("--label", labels, "Display names, in file order");
  cmp->add_option("--baseline", baseline, "Index of the baseline file");
  cmp->add_option("--loss-target", loss_targets, "Loss thresholds (default: baseline best loss)");
  cmp->add_option("--acc-target", acc_targets, "Accuracy thresholds (default: 0.9)");
  cmp->add_flag("--json", as_json, "Emit JSON instead of a table");

  auto* insp = app.add_subcommand("inspect-payload", "Field dump of a serialized client payload");
  insp->add_option("file", payload_file, "Payload file")->required()->check(CLI::ExistingFile);

  auto* ver = app.add_subcommand("verify", "Check protocol invariants on a config at reduced scale");
  ver->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, out, force, workers, dump_payloads, quiet);
    if (*cmp) return cmd_compare(files, labels, baseline, loss_targets, acc_targets, as_json);
    if (*insp) return cmd_inspect(payload_file);
    if (*ver) return cmd_verify(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
