#include "matadv/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace matadv::nn {

std::size_t ParameterStore::add(std::string name, ad::Tensor value) {
  for (const auto& n : names_)
    if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void ParameterStore::quantize_to_float() {
  for (auto& v : values_)
    for (double& x : v.data()) x = static_cast<double>(static_cast<float>(x));
}

BoundParams bind(ad::Tape& tape, const ParameterStore& store, bool trainable) {
  BoundParams out;
  out.vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.vars.push_back(trainable ? tape.leaf(store.value(i)) : tape.constant(store.value(i)));
  }
  return out;
}

std::vector<ad::Tensor> collect_grads(const ad::Gradients& grads, const BoundParams& bound) {
  std::vector<ad::Tensor> out;
  out.reserve(bound.vars.size());
  for (const auto& v : bound.vars) out.push_back(grads.of(v));
  return out;
}

Dense add_dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                Rng& rng, double gain) {
  ad::Tensor w({in, out});
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in));
  for (double& x : w.data()) x = rng.uniform(-bound, bound);
  Dense d;
  d.in = in;
  d.out = out;
  d.weight = store.add(name + ".weight", std::move(w));
  d.bias = store.add(name + ".bias", ad::Tensor({1, out}));
  return d;
}

ad::Var apply(const Dense& layer, const BoundParams& p, const ad::Var& x) {
  return ad::affine(x, p[layer.weight], p[layer.bias]);
}

ad::Var apply_relu(const Dense& layer, const BoundParams& p, const ad::Var& x) {
  return ad::affine_relu(x, p[layer.weight], p[layer.bias]);
}

ad::Var apply_mlp(std::span<const Dense> layers, const BoundParams& p, const ad::Var& x,
                  bool relu_last) {
  ad::Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool last = i + 1 == layers.size();
    h = (last && !relu_last) ? apply(layers[i], p, h) : apply_relu(layers[i], p, h);
  }
  return h;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw WeightFileError("truncated weight file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_weights(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kWeightMagic, sizeof(kWeightMagic) - 1);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& value = store.value(i);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double x : value.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  out.flush();
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

void load_weights(ParameterStore& store, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kWeightMagic) - 1];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kWeightMagic, sizeof magic) != 0) {
    throw WeightFileError(path.string() + ": not a MATADV-W1 weight file");
  }
  const std::uint32_t count = get_u32(in);
  if (count != store.size()) {
    throw WeightFileError(path.string() + ": expected " + std::to_string(store.size()) +
                          " parameters, file has " + std::to_string(count));
  }
  std::vector<ad::Tensor> loaded;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(in);
    if (len > 4096) throw WeightFileError("implausible parameter name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw WeightFileError("truncated weight file");
    if (name != store.name(i)) {
      throw WeightFileError("parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                            store.name(i) + "'");
    }
    const std::uint32_t rank = get_u32(in);
    ad::Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    if (shape != store.value(i).shape()) {
      throw WeightFileError("shape mismatch for " + name + ": file " + ad::to_string(shape) +
                            ", model " + ad::to_string(store.value(i).shape()));
    }
    ad::Tensor t(shape);
    for (double& x : t.data()) x = static_cast<double>(std::bit_cast<float>(get_u32(in)));
    if (!t.all_finite()) throw WeightFileError("non-finite value in " + name);
    loaded.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < count; ++i) store.value(i) = std::move(loaded[i]);
}

}  // namespace matadv::nn
