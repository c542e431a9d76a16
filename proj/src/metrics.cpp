#include "matadv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "matadv/convert.hpp"

namespace matadv {

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"chamfer", r.chamfer}, {"hausdorff", r.hausdorff}, {"knn_mean", r.knn_mean}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.chamfer = j.at("chamfer").get<double>();
  r.hausdorff = j.at("hausdorff").get<double>();
  r.knn_mean = j.at("knn_mean").get<double>();
}

namespace {

// nearest squared distance from each point of `from` into `to`
std::vector<double> nearest_sq(const PointCloud& from, const PointCloud& to) {
  std::vector<double> out(from.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < from.size(); ++i)
    for (std::size_t j = 0; j < to.size(); ++j)
      out[i] = std::min(out[i], squared_distance(from[i], to[j]));
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double chamfer(const PointCloud& p, const PointCloud& q) {
  return mean_of(nearest_sq(p, q)) + mean_of(nearest_sq(q, p));
}

double directed_hausdorff(const PointCloud& p, const PointCloud& q) {
  const auto d = nearest_sq(p, q);
  return std::sqrt(*std::max_element(d.begin(), d.end()));
}

double hausdorff(const PointCloud& p, const PointCloud& q) {
  return std::max(directed_hausdorff(p, q), directed_hausdorff(q, p));
}

double knn_distance(const PointCloud& p, std::size_t k) {
  if (k == 0) throw GeometryError("knn_distance: k must be positive");
  const IndexMatrix nn = knn_excluding_self(p.points(), k);  // throws when k >= N
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double row = 0.0;
    for (std::size_t j : nn.row(i)) row += std::sqrt(squared_distance(p[i], p[j]));
    total += row / static_cast<double>(k);
  }
  return total / static_cast<double>(p.size());
}

double repulsion_loss(const PointCloud& p, std::size_t k, double h) {
  ad::Tape tape;
  return metrics::repulsion_loss(tape.constant(to_tensor(p)), k, h).value().item();
}

std::optional<double> attack_success_rate(std::span<const int> clean_pred,
                                          std::span<const int> adv_pred,
                                          std::span<const int> labels) {
  if (clean_pred.size() != labels.size() || adv_pred.size() != labels.size()) {
    throw std::invalid_argument("attack_success_rate: length mismatch");
  }
  if (labels.empty()) throw std::invalid_argument("attack_success_rate: empty input");
  std::size_t correct = 0, fooled = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (clean_pred[i] != labels[i]) continue;
    ++correct;
    if (adv_pred[i] != labels[i]) ++fooled;
  }
  if (correct == 0) return std::nullopt;
  return 100.0 * static_cast<double>(fooled) / static_cast<double>(correct);
}

MetricReport measure(const PointCloud& original, const PointCloud& perturbed, std::size_t knn_k) {
  MetricReport r;
  r.chamfer = chamfer(original, perturbed);
  r.hausdorff = hausdorff(original, perturbed);
  r.knn_mean = knn_distance(perturbed, knn_k);
  return r;
}

namespace metrics {

ad::Var chamfer(const ad::Var& p, const ad::Var& q) {
  ad::Var d = ad::pairwise_sqdist(p, q);
  return ad::mean_all(ad::min(d, 1)) + ad::mean_all(ad::min(d, 0));
}

ad::Var repulsion_loss(const ad::Var& p, std::size_t k, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("repulsion_loss: bandwidth must be positive");
  const std::size_t n = p.rows();
  const auto pts = to_points(p.value());
  const IndexMatrix nn = knn_excluding_self(pts, k);  // throws when k >= N

  std::vector<std::size_t> anchor(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) anchor[i * k + j] = i;
  ad::Var diff = ad::gather_rows(p, anchor) - ad::gather_rows(p, nn.data);
  ad::Var sq = ad::sum(ad::square(diff), 1);
  ad::Var hinge = ad::relu(ad::add_scalar(ad::neg(ad::sqrt(sq)), h));
  ad::Var weight = ad::exp(ad::scale(sq, -1.0 / (h * h)));
  return ad::scale(ad::sum_all(hinge * weight), 1.0 / static_cast<double>(n * k));
}

}  // namespace metrics

}  // namespace matadv
