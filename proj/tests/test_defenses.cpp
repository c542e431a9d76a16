#include <doctest.h>

#include <algorithm>
#include <set>

#include "matadv/convert.hpp"
#include "matadv/dataset.hpp"
#include "matadv/defenses.hpp"
#include "matadv/rng.hpp"
#include "matadv/victims.hpp"

using namespace matadv;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return PointCloud(pts, 0);
}

// 5 x 5 x 4 grid with spacing 0.1, then one far outlier at index 100.
PointCloud grid_with_outlier(bool outlier = true) {
  std::vector<Vec3> pts;
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 4; ++z) pts.push_back({0.1 * x, 0.1 * y, 0.1 * z});
  if (outlier) pts.push_back({50.0, 0.0, 0.0});
  return PointCloud(pts);
}

bool is_subsequence(const PointCloud& sub, const PointCloud& full) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < full.size() && j < sub.size(); ++i)
    if (full[i] == sub[j]) ++j;
  return j == sub.size();
}

PointCloud scaled(const PointCloud& c, double s) {
  std::vector<Vec3> pts;
  for (const auto& p : c.points()) pts.push_back({s * p[0], s * p[1], s * p[2]});
  return PointCloud(pts);
}

}  // namespace

TEST_CASE("default srs drop") {
  // Oracle values (tests/oracles/derive.py).
  CHECK(default_srs_drop(1024) == 500);
  CHECK(default_srs_drop(256) == 125);
  CHECK(default_srs_drop(0) == 0);
}

TEST_CASE("srs") {
  const auto cloud = random_cloud(1024, 1);
  CHECK(to_tensor(srs(cloud, 0, 5)) == to_tensor(cloud));

  const auto kept = srs(cloud, 500, 7);
  CHECK(kept.size() == 524);
  CHECK(is_subsequence(kept, cloud));
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto it = std::find(cloud.points().begin(), cloud.points().end(), kept[i]);
    REQUIRE(it != cloud.points().end());
    seen.insert(static_cast<std::size_t>(it - cloud.points().begin()));
  }
  CHECK(seen.size() == 524);

  CHECK(to_tensor(srs(cloud, 500, 7)) == to_tensor(kept));
  CHECK(to_tensor(srs(cloud, 500, 8)) != to_tensor(kept));
  CHECK(srs(cloud, 1023, 1).size() == 1);
  CHECK_THROWS_AS(srs(cloud, 1024, 1), std::invalid_argument);
}

TEST_CASE("sor removes the far outlier only") {
  const auto cloud = grid_with_outlier();
  const auto out = sor(cloud, 2, 1.1);
  CHECK(out.size() == 100);
  CHECK(std::find(out.points().begin(), out.points().end(), Vec3{50.0, 0.0, 0.0}) == out.points().end());
  CHECK(to_tensor(out) == to_tensor(grid_with_outlier(false)));
}

TEST_CASE("sor on a uniform grid with a wide threshold keeps everything") {
  const auto grid = grid_with_outlier(false);
  CHECK(sor(grid, 2, 10.0).size() == grid.size());
  CHECK(sor(grid, 6, 10.0).size() == grid.size());
}

TEST_CASE("sor output is an ordered subset and scale equivariant") {
  const auto cloud = random_cloud(300, 2);
  const auto out = sor(cloud, 2, 1.1);
  CHECK(out.size() < cloud.size());
  CHECK(out.size() > cloud.size() / 2);
  CHECK(is_subsequence(out, cloud));
  const auto big = sor(scaled(cloud, 3.0), 2, 1.1);
  CHECK(to_tensor(big) == to_tensor(scaled(out, 3.0)));
  CHECK_THROWS_AS(sor(PointCloud({{0, 0, 0}, {1, 0, 0}}), 2, 1.1), std::invalid_argument);
}

TEST_CASE("apply_defense and defend_then_predict") {
  const auto cloud = random_cloud(256, 3);
  DefenseSpec none;
  CHECK(to_tensor(apply_defense(none, cloud)) == to_tensor(cloud));

  const PointNetLite pn(8, 4);
  CHECK(defend_then_predict(pn, none, cloud) == predict(pn, cloud));

  DefenseSpec srs_spec;
  srs_spec.kind = DefenseKind::srs;
  srs_spec.seed = 11;
  CHECK(apply_defense(srs_spec, cloud, 0).size() == 256 - 125);
  CHECK(to_tensor(apply_defense(srs_spec, cloud, 3)) == to_tensor(apply_defense(srs_spec, cloud, 3)));
  CHECK(to_tensor(apply_defense(srs_spec, cloud, 3)) != to_tensor(apply_defense(srs_spec, cloud, 4)));
  srs_spec.srs_drop = 6;
  CHECK(apply_defense(srs_spec, cloud).size() == 250);

  DefenseSpec sor_spec;
  sor_spec.kind = DefenseKind::sor;
  CHECK(to_tensor(apply_defense(sor_spec, cloud)) == to_tensor(sor(cloud, 2, 1.1)));
  CHECK(defend_then_predict(pn, sor_spec, cloud) == predict(pn, sor(cloud, 2, 1.1)));

  const EdgeConvLite ec(8, 16, 5);
  DefenseSpec harsh;
  harsh.kind = DefenseKind::srs;
  harsh.srs_drop = 250;
  CHECK_THROWS_AS(defend_then_predict(ec, harsh, cloud), std::invalid_argument);
}

TEST_CASE("defense spec json and validation") {
  DefenseSpec d;
  d.kind = DefenseKind::srs;
  d.srs_drop = 42;
  d.seed = 9;
  const auto back = nlohmann::json(d).get<DefenseSpec>();
  CHECK(back.kind == DefenseKind::srs);
  CHECK(back.srs_drop == 42);
  CHECK(back.seed == 9);

  const auto defaults = nlohmann::json::parse(R"({"kind": "sor"})").get<DefenseSpec>();
  CHECK(defaults.kind == DefenseKind::sor);
  CHECK(defaults.sor_k == 2);
  CHECK(defaults.sor_alpha == 1.1);
  CHECK_FALSE(defaults.srs_drop.has_value());

  CHECK_THROWS(nlohmann::json::parse(R"({"kind": "median"})").get<DefenseSpec>());
  CHECK_THROWS(nlohmann::json::parse(R"({"kind": "sor", "sor_k": 0})").get<DefenseSpec>());
  CHECK_THROWS(nlohmann::json::parse(R"({"kind": "sor", "sor_alpha": -1})").get<DefenseSpec>());
  for (auto k : {DefenseKind::none, DefenseKind::srs, DefenseKind::sor})
    CHECK(parse_defense_kind(to_string(k)) == k);
}

TEST_CASE("adversarial training") {
  Dataset train_set, test_set;
  for (std::uint64_t i = 0; i < 8; ++i) {
    ShapeSpec s;
    s.points = 64;
    s.shape = i % 2 ? ShapeClass::cube : ShapeClass::sphere;
    train_set.clouds.push_back(sample_shape(s, static_cast<int>(i % 2), 100 + i));
    test_set.clouds.push_back(sample_shape(s, static_cast<int>(i % 2), 200 + i));
  }
  TrainOptions o;
  o.epochs = 2;
  o.batch = 4;
  o.seed = 3;
  attack::PgdConfig pgd;
  pgd.iterations = 3;
  pgd.epsilon = 0.05;

  PointNetLite a(2, 1), b(2, 1), plain(2, 1);
  const auto ha = adversarial_training(a, train_set, test_set, o, pgd, 0.5);
  const auto hb = adversarial_training(b, train_set, test_set, o, pgd, 0.5);
  CHECK(a.params() == b.params());
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(ha.train_loss.size() == 2);

  train(plain, train_set, test_set, o);
  CHECK_FALSE(a.params() == plain.params());

  CHECK_THROWS(adversarial_training(a, train_set, test_set, o, pgd, 0.0));
  CHECK_THROWS(adversarial_training(a, train_set, test_set, o, pgd, 1.5));
}
