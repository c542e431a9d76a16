#include "matadv/defenses.hpp"

#include <cmath>
#include <stdexcept>

#include "matadv/rng.hpp"

namespace matadv {

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::srs: return "srs";
    case DefenseKind::sor: return "sor";
    default: return "none";
  }
}

DefenseKind parse_defense_kind(const std::string& name) {
  if (name == "none") return DefenseKind::none;
  if (name == "srs") return DefenseKind::srs;
  if (name == "sor") return DefenseKind::sor;
  throw std::invalid_argument("unknown defense '" + name + "'");
}

void DefenseSpec::validate() const {
  if (sor_k == 0) throw std::invalid_argument("defense: sor_k must be at least 1");
  if (!(sor_alpha > 0.0)) throw std::invalid_argument("defense: sor_alpha must be positive");
}

void to_json(nlohmann::json& j, const DefenseSpec& d) {
  j = {{"kind", to_string(d.kind)}, {"sor_k", d.sor_k}, {"sor_alpha", d.sor_alpha}, {"seed", d.seed}};
  j["srs_drop"] = d.srs_drop ? nlohmann::json(*d.srs_drop) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DefenseSpec& d) {
  DefenseSpec def;
  d.kind = parse_defense_kind(j.value("kind", std::string("none")));
  d.sor_k = j.value("sor_k", def.sor_k);
  d.sor_alpha = j.value("sor_alpha", def.sor_alpha);
  d.seed = j.value("seed", def.seed);
  d.srs_drop.reset();
  if (j.contains("srs_drop") && !j.at("srs_drop").is_null()) d.srs_drop = j.at("srs_drop").get<std::size_t>();
  d.validate();
}

std::size_t default_srs_drop(std::size_t n) {
  return static_cast<std::size_t>(std::llround(500.0 / 1024.0 * static_cast<double>(n)));
}

PointCloud srs(const PointCloud& cloud, std::size_t drop, std::uint64_t seed) {
  if (drop >= cloud.size()) {
    throw std::invalid_argument("srs: cannot drop " + std::to_string(drop) + " of " +
                                std::to_string(cloud.size()) + " points");
  }
  Rng rng(seed);
  return cloud.select(rng.sample_without_replacement(cloud.size(), cloud.size() - drop));
}

PointCloud sor(const PointCloud& cloud, std::size_t k, double alpha) {
  const std::size_t n = cloud.size();
  if (k >= n) {
    throw std::invalid_argument("sor: k=" + std::to_string(k) + " needs more than " +
                                std::to_string(n) + " points");
  }
  const IndexMatrix nbrs = knn_excluding_self(cloud.points(), k);
  std::vector<double> mean_dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : nbrs.row(i)) mean_dist[i] += std::sqrt(squared_distance(cloud[i], cloud[j]));
    mean_dist[i] /= static_cast<double>(k);
  }
  double mu = 0.0;
  for (double d : mean_dist) mu += d;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double d : mean_dist) var += (d - mu) * (d - mu);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  const double threshold = mu + alpha * sigma;
  IndexSet keep;
  for (std::size_t i = 0; i < n; ++i)
    if (mean_dist[i] <= threshold) keep.push_back(i);
  return cloud.select(keep);
}

PointCloud apply_defense(const DefenseSpec& spec, const PointCloud& cloud, std::size_t index) {
  spec.validate();
  switch (spec.kind) {
    case DefenseKind::srs:
      return srs(cloud, spec.srs_drop.value_or(default_srs_drop(cloud.size())),
                 derive_seed(spec.seed, "srs", index));
    case DefenseKind::sor: return sor(cloud, spec.sor_k, spec.sor_alpha);
    default: return cloud;
  }
}

int defend_then_predict(const Classifier& model, const DefenseSpec& spec, const PointCloud& cloud,
                        std::size_t index) {
  const PointCloud defended = apply_defense(spec, cloud, index);
  if (defended.size() < model.min_points()) {
    throw std::invalid_argument("defense left " + std::to_string(defended.size()) +
                                " points; the model needs " + std::to_string(model.min_points()));
  }
  return predict(model, defended);
}

TrainHistory adversarial_training(Classifier& model, const Dataset& train_set,
                                  const Dataset& test_set, const TrainOptions& options,
                                  const attack::PgdConfig& pgd, double mix_ratio) {
  if (!(mix_ratio > 0.0 && mix_ratio <= 1.0)) {
    throw std::invalid_argument("adversarial_training: mix_ratio must lie in (0, 1]");
  }
  pgd.validate();
  auto hook = [&](const Classifier& current, std::vector<PointCloud>& batch, std::size_t epoch,
                  std::size_t batch_index) {
    const auto count = static_cast<std::size_t>(
        std::llround(mix_ratio * static_cast<double>(batch.size())));
    for (std::size_t i = 0; i < count; ++i) {
      attack::PgdConfig c = pgd;
      c.seed = derive_seed(derive_seed(pgd.seed, "adv-train", epoch), "batch", batch_index * 4096 + i);
      const int label = *batch[i].label();
      PointCloud adv = attack::pgd_baseline(current, batch[i], label, c).adv_cloud;
      adv.set_label(label);
      batch[i] = std::move(adv);
    }
  };
  return train(model, train_set, test_set, options, hook);
}

}  // namespace matadv
