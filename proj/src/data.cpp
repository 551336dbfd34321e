#include "fedspzo/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fedspzo/errors.hpp"

namespace fedspzo {

void Dataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset is empty");
  if (dim == 0) throw ConfigError("dataset has no features");
  if (features.size() != labels.size() * dim) throw ConfigError("feature matrix shape mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  for (double v : features)
    if (!std::isfinite(v)) throw ConfigError("non-finite feature value");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

double standard_normal(Xoshiro256pp& rng) {
  const double u1 = rng.uniform_open_zero();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Marsaglia-Tsang, with the shape < 1 boost.
double gamma_sample(double shape, Xoshiro256pp& rng) {
  if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
  if (shape < 1.0) return gamma_sample(shape + 1.0, rng) * std::pow(rng.uniform_open_zero(), 1.0 / shape);
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform_open_zero();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

namespace {

template <class It>
void shuffle(It first, It last, Xoshiro256pp& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + rng.below(i));
}

}  // namespace

Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t num_classes, double spread, Seed seed) {
  if (num_classes < 2) throw ConfigError("make_blobs: need at least two classes");
  if (n < num_classes) throw ConfigError("make_blobs: n must be >= num_classes");
  if (dim == 0) throw ConfigError("make_blobs: dim must be >= 1");
  if (!(spread >= 0.0)) throw ConfigError("make_blobs: spread must be >= 0");

  Xoshiro256pp rng(derive_seed(seed, {0xb10b5}));
  std::vector<double> means(num_classes * dim);
  for (double& m : means) m = standard_normal(rng);

  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i % num_classes);
  shuffle(order.begin(), order.end(), rng);

  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.labels = order;
  out.features.resize(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(order[i]);
    for (std::size_t j = 0; j < dim; ++j)
      out.features[i * dim + j] = means[c * dim + j] + spread * standard_normal(rng);
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(trim(line));
      break;
    }
  }
  if (header.empty()) throw ConfigError(path.string() + ": empty file (header row required)");

  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw ConfigError(path.string() + ": missing label column '" + label_column + "'");
  const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());

  Dataset out;
  out.dim = header.size() - 1;
  std::vector<std::string> raw_labels;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_fields(t);
    if (fields.size() != header.size())
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j == label_idx) {
        if (fields[j].empty())
          throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty label");
        raw_labels.push_back(fields[j]);
        continue;
      }
      double v = 0.0;
      if (!parse_double(fields[j], v) || !std::isfinite(v))
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": non-numeric feature '" +
                          fields[j] + "' in column '" + header[j] + "'");
      out.features.push_back(v);
    }
  }
  if (raw_labels.empty()) throw ConfigError(path.string() + ": no data rows");

  bool all_int = true;
  std::vector<long long> ints(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size() && all_int; ++i) all_int = parse_int(raw_labels[i], ints[i]);

  if (all_int) {
    std::map<long long, int> index;
    for (long long v : ints) index.emplace(v, 0);
    int next = 0;
    for (auto& [_, id] : index) id = next++;
    for (long long v : ints) out.labels.push_back(index.at(v));
    out.num_classes = index.size();
  } else {
    std::map<std::string, int> index;
    for (const auto& s : raw_labels) index.emplace(s, 0);
    int next = 0;
    for (auto& [_, id] : index) id = next++;
    for (const auto& s : raw_labels) out.labels.push_back(index.at(s));
    out.num_classes = index.size();
  }
  if (out.dim == 0) throw ConfigError(path.string() + ": no feature columns");
  return out;
}

void write_csv(const std::filesystem::path& path, const Dataset& data, const std::string& label_column) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.dim; ++j) out << 'x' << j << ',';
  out << label_column << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) {
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, ptr - buf);
      out << ',';
    }
    out << data.labels[i] << '\n';
  }
}

void standardize(Dataset& data) {
  const std::size_t n = data.size();
  if (n == 0) return;
  for (std::size_t j = 0; j < data.dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += data.features[i * data.dim + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = data.features[i * data.dim + j] - mean;
      var += c * c;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      double& v = data.features[i * data.dim + j];
      v = sd > 0.0 ? (v - mean) / sd : v - mean;
    }
  }
}

TrainTestSplit stratified_split(const Dataset& data, double test_fraction, Seed seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  Xoshiro256pp rng(derive_seed(seed, {0x5917}));
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& idx : by_class) {
    shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (train.empty() || test.empty()) throw ConfigError("train/test split left one side empty");
  return {data.subset(train), data.subset(test)};
}

std::vector<std::vector<std::size_t>> PartitionPlan::client_indices() const {
  std::vector<std::vector<std::size_t>> out(n_clients);
  for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
  return out;
}

PartitionPlan partition(const Dataset& data, std::size_t n_clients, PartitionSpec spec, Seed seed) {
  const std::size_t n = data.size();
  if (n_clients == 0 || n_clients > n)
    throw ConfigError("cannot split " + std::to_string(n) + " samples across " +
                      std::to_string(n_clients) + " clients");
  PartitionPlan plan;
  plan.n_clients = n_clients;
  plan.spec = spec;
  plan.assignment.assign(n, 0);
  Xoshiro256pp rng(derive_seed(seed, {0x9a27}));

  if (spec.scheme == PartitionScheme::iid) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t c = 0; c < n_clients; ++c)
      for (std::size_t k = c * n / n_clients; k < (c + 1) * n / n_clients; ++k)
        plan.assignment[idx[k]] = static_cast<std::uint32_t>(c);
    return plan;
  }

  if (!(spec.alpha > 0.0)) throw ConfigError("dirichlet alpha must be positive");
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  constexpr int kMaxAttempts = 1000;
  std::vector<double> props(n_clients);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::size_t> counts(n_clients, 0);
    for (auto idx : by_class) {
      if (idx.empty()) continue;
      shuffle(idx.begin(), idx.end(), rng);
      double total = 0.0;
      for (double& p : props) total += (p = gamma_sample(spec.alpha, rng));
      if (!(total > 0.0)) {
        std::fill(props.begin(), props.end(), 0.0);
        props[rng.below(n_clients)] = total = 1.0;
      }
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        cum += props[c] / total;
        const std::size_t end = c + 1 == n_clients
                                    ? idx.size()
                                    : std::min(idx.size(), static_cast<std::size_t>(std::llround(
                                                               cum * static_cast<double>(idx.size()))));
        for (std::size_t k = start; k < end; ++k) plan.assignment[idx[k]] = static_cast<std::uint32_t>(c);
        counts[c] += end > start ? end - start : 0;
        start = std::max(start, end);
      }
    }
    if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; })) return plan;
  }
  throw ConfigError("dirichlet partition: could not give every one of " + std::to_string(n_clients) +
                    " clients a sample after " + std::to_string(kMaxAttempts) + " draws");
}

std::vector<Dataset> split_by_plan(const Dataset& data, const PartitionPlan& plan) {
  std::vector<Dataset> out;
  for (const auto& idx : plan.client_indices()) out.push_back(data.subset(idx));
  return out;
}

template <class T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch<T> b;
  b.inputs = Matrix<T>(indices.size(), data.dim);
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = data.row(indices[r]);
    for (std::size_t j = 0; j < data.dim; ++j) b.inputs.at(r, j) = static_cast<T>(src[j]);
    b.labels.push_back(data.labels[indices[r]]);
  }
  return b;
}

template <class T>
Batch<T> full_batch(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch<T>(data, idx);
}

template <class T>
Batch<T> sample_batch(const Dataset& data, std::size_t batch_size, Xoshiro256pp& rng) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("cannot sample a batch from an empty dataset");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(batch_size, n);
  for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(take);
  return make_batch<T>(data, idx);
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> make_batch<double>(const Dataset&, std::span<const std::size_t>);
template Batch<float> full_batch<float>(const Dataset&);
template Batch<double> full_batch<double>(const Dataset&);
template Batch<float> sample_batch<float>(const Dataset&, std::size_t, Xoshiro256pp&);
template Batch<double> sample_batch<double>(const Dataset&, std::size_t, Xoshiro256pp&);

}  // namespace fedspzo
