#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matadv/dataset.hpp"
#include "matadv/geom.hpp"
#include "matadv/mat.hpp"
#include "matadv/rng.hpp"
#include "matadv/victims.hpp"

namespace matadv::attack {

/// Which blocks of the representation may be perturbed.
struct ComponentSet {
  bool centers = true;
  bool radii = true;
  bool features = true;

  bool empty() const { return !centers && !radii && !features; }
  /// "C", "CR", "CRZ", ... in fixed C, R, Z order.
  std::string to_string() const;
  /// Inverse of to_string; letters in any order, no repeats.
  static ComponentSet parse(const std::string& text);

  friend bool operator==(const ComponentSet&, const ComponentSet&) = default;
};

enum class MisLoss { neg_cross_entropy, logit_margin };

std::string to_string(MisLoss loss);
MisLoss parse_mis_loss(const std::string& name);

struct AttackConfig {
  double epsilon = 0.45;
  double lambda1 = 1.0;   // chamfer weight
  double lambda2 = 0.01;  // squared Frobenius weight on the masked perturbation
  double rho = 0.5;       // fraction of spheres masked per iteration
  std::size_t iterations = 200;
  double step_size = 0.01;
  std::uint64_t seed = 0;
  MisLoss loss = MisLoss::neg_cross_entropy;
  ComponentSet components;
  std::size_t per_sphere = 2;

  /// Throws std::invalid_argument on an out-of-range field.
  void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

/// Additive offsets shaped like the representation.
struct Perturbation {
  ad::Tensor centers;
  ad::Tensor radii;
  ad::Tensor features;

  static Perturbation zeros_like(const mat::MATRep& rep);
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

using Mask = std::vector<std::uint8_t>;

/// Exactly round(rho n) zeros at uniformly drawn positions, ones elsewhere.
Mask dropout_mask(std::size_t n, double rho, Rng& rng);

/// Copy of `delta` with masked sphere rows zeroed in all three blocks.
Perturbation apply_mask(const Perturbation& delta, const Mask& mask);

struct AttackResult {
  std::string attack;
  PointCloud adv_cloud{std::vector<Vec3>{{0.0, 0.0, 0.0}}};
  int label = 0;
  int clean_pred = 0;
  int adv_pred = 0;
  bool success = false;
  /// The surrogate already misclassified the clean cloud; no optimization ran.
  bool skipped = false;
  std::size_t iterations_used = 0;
  double final_mis_loss = 0.0;
  double final_chamfer = 0.0;
  double final_reg = 0.0;
  /// Largest coordinate offset from the budget anchor.
  double linf = 0.0;
};

void to_json(nlohmann::json& j, const AttackResult& r);
void from_json(const nlohmann::json& j, AttackResult& r);
/// One JSON object per line.
void write_jsonl(const std::vector<AttackResult>& results, const std::filesystem::path& path);
std::vector<AttackResult> read_jsonl(const std::filesystem::path& path);

/// Per-iteration view of the optimization, for instrumentation.
struct IterationTrace {
  std::size_t iteration = 0;
  const Mask* mask = nullptr;
  const Perturbation* gradient = nullptr;
  double loss = 0.0;
};
using TraceFn = std::function<void(const IterationTrace&)>;

/// Offsets on the caller's tape. An invalid Var leaves its block unperturbed.
struct DeltaVars {
  ad::Var centers;
  ad::Var radii;
  ad::Var features;
};

struct ObjectiveTerms {
  ad::Var points;  // clamped decode
  ad::Var mis;
  ad::Var chamfer;
  ad::Var reg;
  ad::Var total;
};

/// The attack objective for rep + mask * delta, decoded and clamped to
/// anchor +- epsilon. `mask` may be null (no dropout).
ObjectiveTerms attack_objective(ad::Tape& tape, const Classifier& surrogate,
                                const mat::Decoder& decoder, const mat::MATRep& rep,
                                const PointCloud& cloud, int label, const AttackConfig& config,
                                const ad::Tensor& anchor, const DeltaVars& delta,
                                const Mask* mask);

/// Adam on a perturbation of the cloud's medial representation. Each
/// iteration masks a fresh random subset of spheres, decodes, clamps to the
/// l-inf ball around the clean reconstruction and steps on
/// L_mis + lambda1 chamfer(P, P') + lambda2 |Delta_m|_F^2.
/// The returned cloud decodes the full, unmasked perturbation.
AttackResult mat_adv_attack(const Classifier& surrogate, const mat::Encoder& encoder,
                            const mat::Decoder& decoder, const PointCloud& cloud, int label,
                            const AttackConfig& config, const TraceFn& trace = {});

struct PgdConfig {
  double epsilon = 0.45;
  std::size_t iterations = 200;
  double step_size = 0.01;
  /// Stop at the first iterate the surrogate misclassifies.
  bool stop_on_success = false;
  /// Uniform start inside the ball instead of the clean cloud.
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PgdConfig& c);
void from_json(const nlohmann::json& j, PgdConfig& c);

/// Sign-gradient ascent on cross-entropy in coordinate space, projected onto
/// the l-inf ball around the clean cloud after every step.
AttackResult pgd_baseline(const Classifier& surrogate, const PointCloud& cloud, int label,
                          const PgdConfig& config);

/// Runs the attack on every cloud; per-cloud seeds derive from (seed, index).
std::vector<AttackResult> mat_adv_dataset(const Classifier& surrogate, const mat::Encoder& encoder,
                                          const mat::Decoder& decoder, const Dataset& data,
                                          const AttackConfig& config);
std::vector<AttackResult> pgd_dataset(const Classifier& surrogate, const Dataset& data,
                                      const PgdConfig& config);

/// White-box and transfer success over the surrogate's clean-correct clouds.
struct AblationRow {
  ComponentSet components;
  double whitebox_asr = 0.0;
  double transfer_asr = 0.0;
  std::size_t n_eval = 0;
};

std::vector<AblationRow> component_ablation(const Classifier& surrogate, const Classifier& target,
                                            const mat::Encoder& encoder,
                                            const mat::Decoder& decoder, const Dataset& data,
                                            const AttackConfig& config,
                                            const std::vector<ComponentSet>& subsets);

}  // namespace matadv::attack
