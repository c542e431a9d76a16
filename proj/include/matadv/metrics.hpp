#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include <json.hpp>

#include "matadv/autodiff.hpp"
#include "matadv/geom.hpp"

namespace matadv {

/// Imperceptibility measures between a clean and a perturbed cloud.
struct MetricReport {
  double chamfer = 0.0;
  double hausdorff = 0.0;
  double knn_mean = 0.0;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// Squared, bidirectional, mean-reduced Chamfer distance.
double chamfer(const PointCloud& p, const PointCloud& q);
/// max over p of the distance to the nearest q (unsquared).
double directed_hausdorff(const PointCloud& p, const PointCloud& q);
double hausdorff(const PointCloud& p, const PointCloud& q);
/// Mean over points of the mean distance to their k nearest neighbors (self excluded).
double knn_distance(const PointCloud& p, std::size_t k);
/// (1/(N k)) sum_i sum_{j in kNN(i)} max(0, h - d_ij) exp(-d_ij^2 / h^2).
double repulsion_loss(const PointCloud& p, std::size_t k, double h);

/// Percentage of clean-correct samples whose adversarial prediction is
/// wrong. nullopt when no sample was clean-correct.
std::optional<double> attack_success_rate(std::span<const int> clean_pred,
                                          std::span<const int> adv_pred,
                                          std::span<const int> labels);

/// Chamfer and Hausdorff between the two clouds; kNN smoothness of `perturbed`.
MetricReport measure(const PointCloud& original, const PointCloud& perturbed,
                     std::size_t knn_k = 8);

inline constexpr double kDefaultRepulsionBandwidth = 0.03;
inline constexpr std::size_t kDefaultRepulsionNeighbors = 8;

namespace metrics {

/// Differentiable Chamfer between row sets p (n x 3) and q (m x 3).
ad::Var chamfer(const ad::Var& p, const ad::Var& q);
/// Differentiable repulsion loss; neighbor sets are chosen on the current values.
ad::Var repulsion_loss(const ad::Var& p, std::size_t k, double h);

}  // namespace metrics

}  // namespace matadv
