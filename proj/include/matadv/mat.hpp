#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "matadv/autodiff.hpp"
#include "matadv/dataset.hpp"
#include "matadv/geom.hpp"
#include "matadv/nn.hpp"

namespace matadv::mat {

/// Medial spheres: centers (n x 3), radii (n x 1) and per-sphere features (n x D).
struct MATRep {
  ad::Tensor centers;
  ad::Tensor radii;
  ad::Tensor features;

  /// Checks shapes, finiteness and nonnegative radii.
  MATRep(ad::Tensor centers, ad::Tensor radii, ad::Tensor features);
  MATRep() = default;

  std::size_t spheres() const { return centers.rows(); }
  std::size_t feature_dim() const { return features.cols(); }

  friend bool operator==(const MATRep&, const MATRep&) = default;
};

void to_json(nlohmann::json& j, const MATRep& m);
void from_json(const nlohmann::json& j, MATRep& m);

struct EncoderConfig {
  std::size_t spheres = 128;      // n
  std::size_t sample_size = 256;  // N', farthest-point samples
  std::size_t neighbors = 16;     // k_b, grouping radius in points
  std::size_t feature_dim = 64;   // D_F
  std::size_t head_hidden = 64;
  std::uint64_t fps_seed = 0;
};

struct DecoderConfig {
  std::size_t feature_dim = 64;
  std::size_t interp_neighbors = 8;  // k_i
  std::size_t hidden = 128;
};

/// Differentiable encoder outputs, all on the caller's tape.
struct EncodedVars {
  ad::Var sampled;   // P^s, N' x 3
  ad::Var features;  // F^s, N' x D
  ad::Var weights;   // W, N' x n, columns on the simplex
  ad::Var centers;
  ad::Var radii;
  ad::Var sphere_features;
};

/// Set-abstraction backbone, then a pointwise weight head whose column
/// softmax turns the sampled points into n convex combinations.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  /// Last layer of the weight head; zeroing it makes W uniform.
  const nn::Dense& weight_logits() const { return head_.back(); }

  EncodedVars forward(ad::Tape& tape, const nn::BoundParams& p, const PointCloud& cloud) const;
  MATRep encode(const PointCloud& cloud) const;

 private:
  EncoderConfig config_;
  nn::ParameterStore params_;
  std::vector<nn::Dense> backbone_;
  std::vector<nn::Dense> head_;
};

enum class DecodeMode { refined, raw_spheres };

/// Decoder activations; `points` is the output cloud.
struct DecodedVars {
  ad::Var surface;  // Q, lattice samples on the (clamped) spheres
  ad::Var interpolated;  // Y
  ad::Var points;
};

/// Lattice samples on every sphere, interpolated sphere features, then two
/// residual refinement MLPs on [points; features].
class Decoder {
 public:
  Decoder(const DecoderConfig& config, std::uint64_t seed);

  const DecoderConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  /// Output layers of the two refinement stages.
  std::vector<nn::Dense> refinement_outputs() const { return {stage1_.back(), stage2_.back()}; }

  /// Negative radii are clamped to zero before sampling.
  DecodedVars forward(ad::Tape& tape, const nn::BoundParams& p, const ad::Var& centers,
                      const ad::Var& radii, const ad::Var& features, std::size_t per_sphere,
                      DecodeMode mode = DecodeMode::refined) const;
  PointCloud decode(const MATRep& rep, std::size_t per_sphere,
                    DecodeMode mode = DecodeMode::refined) const;

 private:
  DecoderConfig config_;
  nn::ParameterStore params_;
  std::vector<nn::Dense> stage1_;
  std::vector<nn::Dense> stage2_;
};

/// Lattice samples C_j + max(R_j, 0) u_t in sphere-major order ((n s) x 3).
ad::Var sphere_samples(const ad::Var& centers, const ad::Var& radii, std::size_t per_sphere);

struct MatTrainOptions {
  std::size_t epochs = 0;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  std::size_t per_sphere = 2;  // s during training; n s should match the cloud size
  double radius_weight = 0.01;  // gamma of the pretraining objective
  double chamfer_weight = 100.0;
  double repulsion_weight = 1.0;
  std::size_t repulsion_neighbors = 8;
  double repulsion_bandwidth = 0.03;
};

/// Mean training loss per epoch.
struct MatHistory {
  std::vector<double> loss;
};

/// chamfer(S(Theta), P) - gamma mean(R) on raw sphere samples.
MatHistory pretrain_encoder(Encoder& encoder, const Dataset& data, const MatTrainOptions& options);
/// Reconstruction objective with the encoder held fixed.
MatHistory train_decoder(const Encoder& encoder, Decoder& decoder, const Dataset& data,
                         const MatTrainOptions& options);
/// Same objective with every parameter trainable.
MatHistory finetune_joint(Encoder& encoder, Decoder& decoder, const Dataset& data,
                          const MatTrainOptions& options);

/// chamfer_weight * chamfer(out, P) + repulsion_weight * repulsion(out).
ad::Var reconstruction_loss(const ad::Var& reconstructed, const ad::Var& target,
                            const MatTrainOptions& options);

/// Mean Chamfer between each cloud and its reconstruction.
double reconstruction_chamfer(const Encoder& encoder, const Decoder& decoder, const Dataset& data,
                              std::size_t per_sphere);

/// Encode, then decode with `per_sphere` lattice points per sphere.
PointCloud resample_from_mat(const Encoder& encoder, const Decoder& decoder,
                             const PointCloud& cloud, std::size_t per_sphere,
                             DecodeMode mode = DecodeMode::refined);

}  // namespace matadv::mat
