#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "matadv/attack.hpp"
#include "matadv/dataset.hpp"
#include "matadv/geom.hpp"
#include "matadv/victims.hpp"

namespace matadv {

enum class DefenseKind { none, srs, sor };

std::string to_string(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string& name);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::none;
  /// Points dropped by SRS; unset scales 500-of-1024 to the cloud size.
  std::optional<std::size_t> srs_drop;
  std::size_t sor_k = 2;
  double sor_alpha = 1.1;
  std::uint64_t seed = 0;

  /// Short display name: "none", "srs", "sor".
  std::string name() const { return to_string(kind); }
  void validate() const;
};

void to_json(nlohmann::json& j, const DefenseSpec& d);
void from_json(const nlohmann::json& j, DefenseSpec& d);

/// round(500 / 1024 * n).
std::size_t default_srs_drop(std::size_t n);

/// Keeps a uniformly random subset of N - drop points in their original order.
PointCloud srs(const PointCloud& cloud, std::size_t drop, std::uint64_t seed);

/// Drops points whose mean distance to their k nearest neighbors exceeds
/// mean + alpha * stddev of that statistic over the cloud.
PointCloud sor(const PointCloud& cloud, std::size_t k, double alpha);

/// The defense applied to the index-th query; SRS reseeds from (seed, index).
PointCloud apply_defense(const DefenseSpec& spec, const PointCloud& cloud, std::size_t index = 0);

int defend_then_predict(const Classifier& model, const DefenseSpec& spec, const PointCloud& cloud,
                        std::size_t index = 0);

/// Standard training where, in every minibatch, the first round(mix_ratio * batch)
/// clouds are replaced by PGD examples crafted against the current model.
TrainHistory adversarial_training(Classifier& model, const Dataset& train_set,
                                  const Dataset& test_set, const TrainOptions& options,
                                  const attack::PgdConfig& pgd, double mix_ratio);

}  // namespace matadv
