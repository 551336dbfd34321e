#include "fedspzo/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "fedspzo/byte_io.hpp"

namespace fedspzo {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32" || s == "32") return Precision::f32;
  if (s == "f64" || s == "64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

std::string to_string(ActivationKind k) { return k == ActivationKind::tanh ? "tanh" : "relu"; }

ActivationKind activation_from_string(const std::string& s) {
  if (s == "tanh") return ActivationKind::tanh;
  if (s == "relu") return ActivationKind::relu;
  throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

std::size_t layer_param_count(const Layer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->out * d->in + d->out;
  return 0;
}

std::size_t layer_output_width(const Layer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->out;
  return std::get<ActivationLayer>(layer).width;
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t num_classes, ActivationKind act,
                         std::optional<std::size_t> cut) {
  ModelSpec spec;
  std::size_t prev = input_dim;
  for (std::size_t h : hidden) {
    spec.layers.push_back(DenseLayer{prev, h});
    spec.layers.push_back(ActivationLayer{act, h});
    prev = h;
  }
  spec.layers.push_back(DenseLayer{prev, num_classes});
  spec.cut = cut ? *cut : spec.default_cut();
  spec.validate();
  return spec;
}

std::size_t ModelSpec::input_dim() const {
  if (layers.empty()) return 0;
  if (const auto* d = std::get_if<DenseLayer>(&layers.front())) return d->in;
  return std::get<ActivationLayer>(layers.front()).width;
}

std::size_t ModelSpec::num_classes() const {
  return layers.empty() ? 0 : layer_output_width(layers.back());
}

std::size_t ModelSpec::param_count() const {
  std::size_t d = 0;
  for (const auto& l : layers) d += layer_param_count(l);
  return d;
}

std::size_t ModelSpec::default_cut() const {
  for (std::size_t i = layers.size(); i-- > 0;)
    if (std::holds_alternative<DenseLayer>(layers[i])) return i;
  return 0;
}

void ModelSpec::validate() const {
  if (layers.size() < 2) throw ConfigError("model needs at least two layers to split");
  if (!std::holds_alternative<DenseLayer>(layers.back()))
    throw ConfigError("last layer must be dense (it produces the logits)");
  std::size_t width = input_dim();
  if (width == 0) throw ConfigError("input dimension must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&layers[i])) {
      if (d->in != width || d->out == 0)
        throw ConfigError("layer " + std::to_string(i) + ": dense input " + std::to_string(d->in) +
                          " does not match previous width " + std::to_string(width));
      width = d->out;
    } else if (std::get<ActivationLayer>(layers[i]).width != width) {
      throw ConfigError("layer " + std::to_string(i) + ": activation width mismatch");
    }
  }
  if (num_classes() < 2) throw ConfigError("need at least two classes");
  if (cut == 0 || cut >= layers.size())
    throw ConfigError("cut " + std::to_string(cut) + " must lie strictly inside [1, " +
                      std::to_string(layers.size() - 1) + "]");
}

BlockSplit block_split(const ModelSpec& spec) {
  BlockSplit s;
  s.cut = spec.cut;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    (i < spec.cut ? s.d1 : s.d2) += layer_param_count(spec.layers[i]);
  return s;
}

template <class T>
void ParamVector<T>::check_finite() const {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!std::isfinite(values_[i]))
      throw NumericError("non-finite parameter at index " + std::to_string(i));
}

namespace {

std::uint64_t layer_flops(const Layer& layer, std::size_t batch) {
  if (const auto* d = std::get_if<DenseLayer>(&layer))
    return 2ULL * d->in * d->out * batch;
  return static_cast<std::uint64_t>(std::get<ActivationLayer>(layer).width) * batch;
}

template <class T>
void check_finite_activation(const Matrix<T>& m, std::size_t layer) {
  for (T v : m.data)
    if (!std::isfinite(v))
      throw NumericError("non-finite activation in layer " + std::to_string(layer),
                         static_cast<int>(layer));
}

}  // namespace

template <class T>
Mlp<T>::Mlp(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  split_ = block_split(spec_);
  offsets_.reserve(spec_.layers.size() + 1);
  std::size_t off = 0;
  for (const auto& l : spec_.layers) {
    offsets_.push_back(off);
    off += layer_param_count(l);
  }
  offsets_.push_back(off);
}

template <class T>
ParamVector<T> Mlp<T>::init_params(Seed seed) const {
  ParamVector<T> theta(param_count());
  Xoshiro256pp rng(seed);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto* d = std::get_if<DenseLayer>(&spec_.layers[i]);
    if (!d) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(d->in + d->out));
    for (std::size_t k = 0; k < d->in * d->out; ++k)
      theta[offsets_[i] + k] = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  }
  return theta;
}

template <class T>
void Mlp<T>::check_inputs(const Matrix<T>& inputs) const {
  if (inputs.cols != spec_.input_dim())
    throw ConfigError("batch feature dim " + std::to_string(inputs.cols) +
                      " does not match model input dim " + std::to_string(spec_.input_dim()));
  if (inputs.rows == 0) throw ConfigError("empty batch");
}

template <class T>
void Mlp<T>::check_labels(std::span<const int> labels, std::size_t rows) const {
  if (labels.size() != rows)
    throw ConfigError("label count " + std::to_string(labels.size()) + " does not match batch rows " +
                      std::to_string(rows));
  const int classes = static_cast<int>(spec_.num_classes());
  for (int y : labels)
    if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " out of range");
}

template <class T>
Matrix<T> Mlp<T>::run_layers(std::size_t first, std::size_t last, std::span<const T> theta,
                             Matrix<T> x) const {
  const std::size_t base = offsets_[first];
  for (std::size_t li = first; li < last; ++li) {
    const Layer& layer = spec_.layers[li];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const T* w = theta.data() + (offsets_[li] - base);
      const T* b = w + d->in * d->out;
      Matrix<T> out(x.rows, d->out);
      for (std::size_t r = 0; r < x.rows; ++r) {
        const T* xr = x.data.data() + r * d->in;
        for (std::size_t o = 0; o < d->out; ++o) {
          const T* wo = w + o * d->in;
          T acc = T{0};
          for (std::size_t i = 0; i < d->in; ++i) acc += wo[i] * xr[i];
          out.data[r * d->out + o] = acc + b[o];
        }
      }
      x = std::move(out);
    } else {
      const auto& a = std::get<ActivationLayer>(layer);
      if (a.kind == ActivationKind::tanh) {
        for (T& v : x.data) v = std::tanh(v);
      } else {
        for (T& v : x.data) v = v > T{0} ? v : T{0};
      }
    }
    check_finite_activation(x, li);
  }
  return x;
}

template <class T>
T Mlp<T>::mean_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) const {
  T total = T{0};
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto z = logits.row(r);
    const T m = *std::max_element(z.begin(), z.end());
    T s = T{0};
    for (T v : z) s += std::exp(v - m);
    total += (m + std::log(s)) - z[static_cast<std::size_t>(labels[r])];
  }
  const T loss = total / static_cast<T>(logits.rows);
  if (!std::isfinite(loss))
    throw NumericError("non-finite loss", static_cast<int>(spec_.layers.size()));
  return loss;
}

template <class T>
T Mlp<T>::forward_loss(std::span<const T> theta, const Batch<T>& batch) const {
  if (theta.size() != param_count())
    throw ConfigError("parameter length " + std::to_string(theta.size()) + " != model d " +
                      std::to_string(param_count()));
  check_inputs(batch.inputs);
  check_labels(batch.labels, batch.inputs.rows);
  const Matrix<T> z = run_layers(0, spec_.layers.size(), theta, batch.inputs);
  return mean_cross_entropy(z, batch.labels);
}

template <class T>
Matrix<T> Mlp<T>::forward_block1(std::span<const T> theta1, const Matrix<T>& inputs) const {
  if (theta1.size() != split_.d1)
    throw ConfigError("block-1 parameter length " + std::to_string(theta1.size()) + " != d1 " +
                      std::to_string(split_.d1));
  check_inputs(inputs);
  return run_layers(0, split_.cut, theta1, inputs);
}

template <class T>
T Mlp<T>::forward_block2(std::span<const T> theta2, const Matrix<T>& cut_activation,
                         std::span<const int> labels) const {
  if (theta2.size() != split_.d2)
    throw ConfigError("block-2 parameter length " + std::to_string(theta2.size()) + " != d2 " +
                      std::to_string(split_.d2));
  if (cut_activation.cols != layer_output_width(spec_.layers[split_.cut - 1]))
    throw ConfigError("cut activation width does not match the model");
  check_labels(labels, cut_activation.rows);
  const Matrix<T> z = run_layers(split_.cut, spec_.layers.size(), theta2, cut_activation);
  return mean_cross_entropy(z, labels);
}

template <class T>
Matrix<T> Mlp<T>::logits(std::span<const T> theta, const Matrix<T>& inputs) const {
  if (theta.size() != param_count()) throw ConfigError("parameter length mismatch");
  check_inputs(inputs);
  return run_layers(0, spec_.layers.size(), theta, inputs);
}

template <class T>
EvalResult Mlp<T>::evaluate(std::span<const T> theta, const Batch<T>& batch) const {
  check_labels(batch.labels, batch.inputs.rows);
  const Matrix<T> z = logits(theta, batch.inputs);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < z.rows; ++r) {
    const auto row = z.row(r);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == batch.labels[r]) ++correct;
  }
  return {static_cast<double>(mean_cross_entropy(z, batch.labels)),
          static_cast<double>(correct) / static_cast<double>(z.rows)};
}

template <class T>
std::vector<T> Mlp<T>::backprop_gradient(std::span<const T> theta, const Batch<T>& batch) const {
  if (theta.size() != param_count()) throw ConfigError("parameter length mismatch");
  check_inputs(batch.inputs);
  check_labels(batch.labels, batch.inputs.rows);

  const std::size_t n_layers = spec_.layers.size();
  // acts[i] is the input to layer i; acts[n_layers] holds the logits.
  std::vector<Matrix<T>> acts;
  acts.reserve(n_layers + 1);
  acts.push_back(batch.inputs);
  for (std::size_t li = 0; li < n_layers; ++li)
    acts.push_back(run_layers(li, li + 1, theta.subspan(offsets_[li]), acts.back()));

  const Matrix<T>& z = acts.back();
  const T inv_batch = T{1} / static_cast<T>(z.rows);
  Matrix<T> delta(z.rows, z.cols);
  for (std::size_t r = 0; r < z.rows; ++r) {
    const auto row = z.row(r);
    const T m = *std::max_element(row.begin(), row.end());
    T s = T{0};
    for (T v : row) s += std::exp(v - m);
    for (std::size_t c = 0; c < z.cols; ++c) {
      const T p = std::exp(row[c] - m) / s;
      const T onehot = static_cast<int>(c) == batch.labels[r] ? T{1} : T{0};
      delta.at(r, c) = (p - onehot) * inv_batch;
    }
  }

  std::vector<T> grad(param_count(), T{0});
  for (std::size_t li = n_layers; li-- > 0;) {
    const Matrix<T>& x = acts[li];
    if (const auto* d = std::get_if<DenseLayer>(&spec_.layers[li])) {
      const T* w = theta.data() + offsets_[li];
      T* gw = grad.data() + offsets_[li];
      T* gb = gw + d->in * d->out;
      Matrix<T> dx(x.rows, d->in);
      for (std::size_t r = 0; r < x.rows; ++r) {
        for (std::size_t o = 0; o < d->out; ++o) {
          const T g = delta.at(r, o);
          gb[o] += g;
          for (std::size_t i = 0; i < d->in; ++i) {
            gw[o * d->in + i] += g * x.at(r, i);
            dx.at(r, i) += w[o * d->in + i] * g;
          }
        }
      }
      delta = std::move(dx);
    } else {
      const auto& a = std::get<ActivationLayer>(spec_.layers[li]);
      const Matrix<T>& y = acts[li + 1];
      for (std::size_t k = 0; k < delta.data.size(); ++k) {
        if (a.kind == ActivationKind::tanh)
          delta.data[k] *= T{1} - y.data[k] * y.data[k];
        else if (!(x.data[k] > T{0}))
          delta.data[k] = T{0};
      }
    }
  }
  return grad;
}

template <class T>
std::uint64_t Mlp<T>::block1_flops(std::size_t batch_size) const {
  std::uint64_t f = 0;
  for (std::size_t i = 0; i < split_.cut; ++i) f += layer_flops(spec_.layers[i], batch_size);
  return f;
}

template <class T>
std::uint64_t Mlp<T>::block2_flops(std::size_t batch_size) const {
  std::uint64_t f = 0;
  for (std::size_t i = split_.cut; i < spec_.layers.size(); ++i)
    f += layer_flops(spec_.layers[i], batch_size);
  return f;
}

// ---------------------------------------------------------------------------
// Checkpoints

CheckpointHeader decode_checkpoint_header(std::span<const std::uint8_t> bytes) {
  bytes::Reader in(bytes);
  in.expect_magic("FSPZ");
  CheckpointHeader h;
  h.version = in.u32();
  if (h.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(h.version));
  const std::uint8_t p = in.u8();
  if (p != 4 && p != 8) throw FormatError("bad precision flag " + std::to_string(p));
  h.precision = static_cast<Precision>(p);
  h.d = in.u64();
  h.cut = in.u32();
  return h;
}

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const ParamVector<T>& theta, std::uint32_t cut) {
  std::vector<std::uint8_t> out;
  out.reserve(21 + theta.size() * sizeof(T));
  bytes::put_magic(out, "FSPZ");
  bytes::put_u32(out, kCheckpointVersion);
  bytes::put_u8(out, static_cast<std::uint8_t>(precision_of<T>()));
  bytes::put_u64(out, theta.size());
  bytes::put_u32(out, cut);
  for (T v : theta.values()) {
    if constexpr (std::is_same_v<T, float>)
      bytes::put_f32(out, v);
    else
      bytes::put_f64(out, v);
  }
  return out;
}

template <class T>
ParamVector<T> decode_checkpoint(std::span<const std::uint8_t> data, CheckpointHeader* header) {
  const CheckpointHeader h = decode_checkpoint_header(data);
  if (h.precision != precision_of<T>())
    throw FormatError("checkpoint precision " + to_string(h.precision) + " does not match requested " +
                      to_string(precision_of<T>()));
  bytes::Reader in(data);
  const std::size_t header_bytes = 21;
  in.expect_magic("FSPZ");
  (void)in.u32(), (void)in.u8(), (void)in.u64(), (void)in.u32();
  if (in.remaining() != h.d * sizeof(T))
    throw FormatError("checkpoint body is " + std::to_string(data.size() - header_bytes) +
                      " bytes, expected " + std::to_string(h.d * sizeof(T)));
  std::vector<T> values(h.d);
  for (auto& v : values) {
    if constexpr (std::is_same_v<T, float>)
      v = in.f32();
    else
      v = in.f64();
  }
  if (header) *header = h;
  return ParamVector<T>(std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

template <class T>
void write_checkpoint(const std::filesystem::path& path, const ParamVector<T>& theta,
                      std::uint32_t cut) {
  write_file_bytes(path, encode_checkpoint(theta, cut));
}

template <class T>
ParamVector<T> read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
  return decode_checkpoint<T>(read_file_bytes(path), header);
}

#define FEDSPZO_INSTANTIATE(T)                                                                  \
  template class ParamVector<T>;                                                                \
  template class Mlp<T>;                                                                        \
  template std::vector<std::uint8_t> encode_checkpoint(const ParamVector<T>&, std::uint32_t);   \
  template ParamVector<T> decode_checkpoint<T>(std::span<const std::uint8_t>, CheckpointHeader*); \
  template void write_checkpoint(const std::filesystem::path&, const ParamVector<T>&, std::uint32_t); \
  template ParamVector<T> read_checkpoint<T>(const std::filesystem::path&, CheckpointHeader*);

FEDSPZO_INSTANTIATE(float)
FEDSPZO_INSTANTIATE(double)
#undef FEDSPZO_INSTANTIATE

}  // namespace fedspzo
