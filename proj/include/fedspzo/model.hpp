#pragma once

// Forward-only MLP with a cut layer that splits it into two blocks
// y = f2(theta2; f1(theta1; x)), plus a backprop path used as a gradient
// oracle and for the first-order baseline.
//
// Parameter layout is layer-major in ascending flat index: for each dense
// layer, the row-major [out x in] weight matrix followed by the [out] bias.
// Every perturbation, update, checkpoint and payload uses this order.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedspzo/errors.hpp"
#include "fedspzo/rng.hpp"

namespace fedspzo {

enum class Precision : std::uint8_t { f32 = 4, f64 = 8 };

inline std::size_t scalar_bytes(Precision p) { return static_cast<std::size_t>(p); }
std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

template <class T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

enum class ActivationKind { tanh, relu };

std::string to_string(ActivationKind k);
ActivationKind activation_from_string(const std::string& s);

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  bool operator==(const DenseLayer&) const = default;
};

struct ActivationLayer {
  ActivationKind kind = ActivationKind::tanh;
  std::size_t width = 0;
  bool operator==(const ActivationLayer&) const = default;
};

using Layer = std::variant<DenseLayer, ActivationLayer>;

std::size_t layer_param_count(const Layer& layer);
std::size_t layer_output_width(const Layer& layer);

struct ModelSpec {
  std::vector<Layer> layers;
  // f1 owns layers [0, cut), f2 owns [cut, layers.size()).
  std::size_t cut = 0;

  // dense(input -> h0), act, dense(h0 -> h1), act, ..., dense(-> classes).
  // Without an explicit cut, the cut sits right before the final dense layer.
  static ModelSpec mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t num_classes, ActivationKind act,
                       std::optional<std::size_t> cut = std::nullopt);

  std::size_t input_dim() const;
  std::size_t num_classes() const;
  std::size_t param_count() const;
  std::size_t default_cut() const;

  // Throws ConfigError when dims do not chain, the last layer is not dense,
  // or the cut leaves either block empty.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

struct BlockSplit {
  std::size_t cut = 0;
  std::size_t d1 = 0;
  std::size_t d2 = 0;

  std::size_t d() const { return d1 + d2; }
  bool operator==(const BlockSplit&) const = default;
};

BlockSplit block_split(const ModelSpec& spec);

template <class T>
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t d, T fill = T{0}) : values_(d, fill) {}
  explicit ParamVector(std::vector<T> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> block1(const BlockSplit& s) { return values().first(s.d1); }
  std::span<T> block2(const BlockSplit& s) { return values().subspan(s.d1, s.d2); }
  std::span<const T> block1(const BlockSplit& s) const { return values().first(s.d1); }
  std::span<const T> block2(const BlockSplit& s) const { return values().subspan(s.d1, s.d2); }

  // NumericError on the first NaN/Inf.
  void check_finite() const;

 private:
  std::vector<T> values_;
};

template <class T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <class T>
bool bitwise_equal(const ParamVector<T>& a, const ParamVector<T>& b) {
  return bitwise_equal(a.values(), b.values());
}

// Dense row-major [rows x cols].
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{0}) {}

  T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const T> row(std::size_t r) const { return std::span<const T>(data).subspan(r * cols, cols); }
};

template <class T>
struct Batch {
  Matrix<T> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Anything the split-perturbation step can drive: two blocks with a cached
// activation between them.
template <class T>
class SplitModel {
 public:
  virtual ~SplitModel() = default;

  virtual BlockSplit split() const = 0;
  virtual Matrix<T> forward_block1(std::span<const T> theta1, const Matrix<T>& inputs) const = 0;
  virtual T forward_block2(std::span<const T> theta2, const Matrix<T>& cut_activation,
                           std::span<const int> labels) const = 0;

  // Full-model loss; implementations must agree bitwise with block2(block1(.)).
  virtual T forward_loss(std::span<const T> theta, const Batch<T>& batch) const {
    const BlockSplit s = split();
    const Matrix<T> y = forward_block1(theta.first(s.d1), batch.inputs);
    return forward_block2(theta.subspan(s.d1, s.d2), y, batch.labels);
  }

  virtual std::uint64_t block1_flops(std::size_t batch_size) const = 0;
  virtual std::uint64_t block2_flops(std::size_t batch_size) const = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <class T>
class Mlp final : public SplitModel<T> {
 public:
  explicit Mlp(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t param_count() const { return split_.d(); }

  BlockSplit split() const override { return split_; }

  // Glorot-uniform weights, zero biases.
  ParamVector<T> init_params(Seed seed) const;

  T forward_loss(std::span<const T> theta, const Batch<T>& batch) const override;
  Matrix<T> forward_block1(std::span<const T> theta1, const Matrix<T>& inputs) const override;
  T forward_block2(std::span<const T> theta2, const Matrix<T>& cut_activation,
                   std::span<const int> labels) const override;

  Matrix<T> logits(std::span<const T> theta, const Matrix<T>& inputs) const;
  EvalResult evaluate(std::span<const T> theta, const Batch<T>& batch) const;

  // Analytic gradient of forward_loss with respect to theta.
  std::vector<T> backprop_gradient(std::span<const T> theta, const Batch<T>& batch) const;

  std::uint64_t block1_flops(std::size_t batch_size) const override;
  std::uint64_t block2_flops(std::size_t batch_size) const override;

 private:
  // Runs layers [first, last) on `x`, reading parameters from `theta`
  // which starts at layer `first`'s parameter offset.
  Matrix<T> run_layers(std::size_t first, std::size_t last, std::span<const T> theta,
                       Matrix<T> x) const;
  T mean_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) const;
  void check_inputs(const Matrix<T>& inputs) const;
  void check_labels(std::span<const int> labels, std::size_t rows) const;

  ModelSpec spec_;
  BlockSplit split_;
  std::vector<std::size_t> offsets_;
};

// Checkpoint file: "FSPZ", version u32, precision u8 (bytes per scalar),
// d u64, cut u32, then d little-endian scalars.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  Precision precision = Precision::f64;
  std::uint64_t d = 0;
  std::uint32_t cut = 0;
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const ParamVector<T>& theta, std::uint32_t cut);

template <class T>
ParamVector<T> decode_checkpoint(std::span<const std::uint8_t> bytes, CheckpointHeader* header = nullptr);

CheckpointHeader decode_checkpoint_header(std::span<const std::uint8_t> bytes);

template <class T>
void write_checkpoint(const std::filesystem::path& path, const ParamVector<T>& theta,
                      std::uint32_t cut);

template <class T>
ParamVector<T> read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fedspzo
