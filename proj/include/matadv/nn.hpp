#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "matadv/autodiff.hpp"
#include "matadv/rng.hpp"

namespace matadv::nn {

/// Named, ordered parameter tensors of one model.
class ParameterStore {
 public:
  std::size_t add(std::string name, ad::Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const ad::Tensor& value(std::size_t i) const { return values_[i]; }
  ad::Tensor& value(std::size_t i) { return values_[i]; }
  std::span<ad::Tensor> values() { return values_; }
  std::span<const ad::Tensor> values() const { return values_; }
  std::size_t parameter_count() const;

  /// Rounds every value through 32-bit float, matching the weight-file precision.
  void quantize_to_float();

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> values_;
};

/// Parameters placed on a tape, indexed like their store.
struct BoundParams {
  std::vector<ad::Var> vars;
  const ad::Var& operator[](std::size_t i) const { return vars[i]; }
};

/// Trainable parameters become leaves; frozen ones become constants.
BoundParams bind(ad::Tape& tape, const ParameterStore& store, bool trainable);

/// Gradients of every parameter, in store order (zeros for constants).
std::vector<ad::Tensor> collect_grads(const ad::Gradients& grads, const BoundParams& bound);

/// Affine layer x W + b with W: in x out and b: 1 x out.
struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

/// He-uniform weights, zero bias. `gain` scales the weight range.
Dense add_dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                Rng& rng, double gain = 1.0);

ad::Var apply(const Dense& layer, const BoundParams& p, const ad::Var& x);
ad::Var apply_relu(const Dense& layer, const BoundParams& p, const ad::Var& x);

/// Shared-weight MLP: relu on every layer except optionally the last.
ad::Var apply_mlp(std::span<const Dense> layers, const BoundParams& p, const ad::Var& x,
                  bool relu_last);

inline constexpr char kWeightMagic[] = "MATADV-W1";

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "MATADV-W1", u32 record count, then per record: u32 name length, name,
/// u32 rank, u32 dims, little-endian f32 values.
void save_weights(const ParameterStore& store, const std::filesystem::path& path);
/// Loads into an architecture-shaped store; names and shapes must match.
void load_weights(ParameterStore& store, const std::filesystem::path& path);

}  // namespace matadv::nn
