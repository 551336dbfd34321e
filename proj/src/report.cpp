#include "fedspzo/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fedspzo/errors.hpp"

namespace fedspzo {

using nlohmann::json;
using nlohmann::ordered_json;

std::string MetricsSeries::method() const { return records.empty() ? "" : records.front().method; }
std::string MetricsSeries::task() const { return records.empty() ? "" : records.front().task; }

double MetricsSeries::best_loss() const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : records) best = std::min(best, r.loss);
  return best;
}

double MetricsSeries::best_acc() const {
  double best = 0.0;
  for (const auto& r : records) best = std::max(best, r.acc);
  return best;
}

MetricsSeries load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics file " + path.string());
  MetricsSeries s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not valid JSON");
    try {
      s.records.push_back(metrics_record_from_json(j));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (s.records.empty()) throw FormatError(path.string() + ": no metrics records");
  s.label = s.method();
  return s;
}

Reach reach_loss(const MetricsSeries& s, double target) {
  for (const auto& r : s.records)
    if (r.loss <= target) return {true, r.round, r.ledger.fw_flops};
  return {};
}

Reach reach_acc(const MetricsSeries& s, double target) {
  for (const auto& r : s.records)
    if (r.acc >= target) return {true, r.round, r.ledger.fw_flops};
  return {};
}

namespace {

std::optional<double> flops_ratio(const Reach& row, const Reach& base) {
  if (!row.reached || !base.reached) return std::nullopt;
  if (base.fw_flops == 0) return row.fw_flops == 0 ? std::optional<double>(1.0) : std::nullopt;
  return static_cast<double>(row.fw_flops) / static_cast<double>(base.fw_flops);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::optional<double> CompareReport::loss_flops_ratio(std::size_t row, std::size_t target) const {
  return flops_ratio(rows.at(row).loss.at(target), rows.at(baseline).loss.at(target));
}

std::optional<double> CompareReport::acc_flops_ratio(std::size_t row, std::size_t target) const {
  return flops_ratio(rows.at(row).acc.at(target), rows.at(baseline).acc.at(target));
}

CompareReport compare_report(const std::vector<MetricsSeries>& series, const CompareOptions& opts) {
  if (series.size() < 2) throw ConfigError("compare needs at least two metrics files");
  if (opts.baseline >= series.size()) throw ConfigError("baseline index out of range");
  for (const auto& s : series) {
    if (s.records.empty()) throw ConfigError("metrics series '" + s.label + "' is empty");
    for (const auto& r : s.records)
      if (r.task != series.front().task())
        throw ConfigError("task fingerprint mismatch: '" + s.label + "' has " + r.task + ", '" +
                          series.front().label + "' has " + series.front().task());
  }

  CompareReport rep;
  rep.baseline = opts.baseline;
  rep.loss_targets = opts.loss_targets.empty() ? std::vector<double>{series[opts.baseline].best_loss()}
                                               : opts.loss_targets;
  rep.acc_targets = opts.acc_targets.empty() ? std::vector<double>{0.9} : opts.acc_targets;
  for (const auto& s : series) {
    CompareRow row;
    row.label = s.label;
    row.method = s.method();
    row.best_loss = s.best_loss();
    row.best_acc = s.best_acc();
    for (double t : rep.loss_targets) row.loss.push_back(reach_loss(s, t));
    for (double t : rep.acc_targets) row.acc.push_back(reach_acc(s, t));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string CompareReport::to_text() const {
  std::ostringstream os;
  os << "baseline: " << rows[baseline].label << "\n";
  os << "best: ";
  for (const auto& r : rows) os << r.label << " loss=" << fmt("%.6g", r.best_loss) << " acc=" << fmt("%.4f", r.best_acc) << "  ";
  os << "\n";
  auto section = [&](const char* kind, const std::vector<double>& targets, bool is_loss) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      os << "\n" << kind << " target " << fmt("%.6g", targets[t]) << "\n";
      char head[160];
      std::snprintf(head, sizeof head, "  %-20s %8s %16s %10s\n", "run", "rounds", "fw_flops", "ratio");
      os << head;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Reach& r = is_loss ? rows[i].loss[t] : rows[i].acc[t];
        const auto ratio = is_loss ? loss_flops_ratio(i, t) : acc_flops_ratio(i, t);
        char line[200];
        if (!r.reached) {
          std::snprintf(line, sizeof line, "  %-20s %8s %16s %10s\n", rows[i].label.c_str(), "-", "not reached", "-");
        } else {
          std::snprintf(line, sizeof line, "  %-20s %8u %16llu %10s\n", rows[i].label.c_str(), r.round,
                        static_cast<unsigned long long>(r.fw_flops),
                        ratio ? fmt("%.4f", *ratio).c_str() : "n/a");
        }
        os << line;
      }
    }
  };
  section("loss", loss_targets, true);
  section("accuracy", acc_targets, false);
  return os.str();
}

ordered_json CompareReport::to_json() const {
  ordered_json j;
  j["baseline"] = rows[baseline].label;
  j["loss_targets"] = loss_targets;
  j["acc_targets"] = acc_targets;
  j["runs"] = ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ordered_json row;
    row["label"] = rows[i].label;
    row["method"] = rows[i].method;
    row["best_loss"] = rows[i].best_loss;
    row["best_acc"] = rows[i].best_acc;
    auto reaches = [&](const std::vector<Reach>& rs, bool is_loss) {
      ordered_json arr = ordered_json::array();
      for (std::size_t t = 0; t < rs.size(); ++t) {
        ordered_json e;
        e["reached"] = rs[t].reached;
        if (rs[t].reached) {
          e["round"] = rs[t].round;
          e["fw_flops"] = rs[t].fw_flops;
        }
        const auto ratio = is_loss ? loss_flops_ratio(i, t) : acc_flops_ratio(i, t);
        e["flops_ratio"] = ratio ? ordered_json(*ratio) : ordered_json(nullptr);
        arr.push_back(e);
      }
      return arr;
    };
    row["loss"] = reaches(rows[i].loss, true);
    row["acc"] = reaches(rows[i].acc, false);
    j["runs"].push_back(row);
  }
  return j;
}

}  // namespace fedspzo
