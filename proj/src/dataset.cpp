#include "matadv/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>

#include "matadv/rng.hpp"

namespace matadv {

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(clouds.size());
  for (const auto& c : clouds) {
    if (!c.label()) throw std::invalid_argument("dataset contains an unlabeled cloud");
    out.push_back(*c.label());
  }
  return out;
}

namespace {

constexpr std::array<std::string_view, kShapeClassCount> kNames = {
    "sphere", "cube", "cylinder", "cone", "torus", "capsule", "pyramid", "ell"};

constexpr double kPi = std::numbers::pi;

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

struct Box {
  Vec3 lo, hi;
  double area() const {
    const double a = hi[0] - lo[0], b = hi[1] - lo[1], c = hi[2] - lo[2];
    return 2.0 * (a * b + b * c + a * c);
  }
  bool strictly_contains(const Vec3& p) const {
    for (int i = 0; i < 3; ++i)
      if (!(p[i] > lo[i] && p[i] < hi[i])) return false;
    return true;
  }
};

Vec3 sample_box_surface(const Box& box, Rng& rng) {
  const double ext[3] = {box.hi[0] - box.lo[0], box.hi[1] - box.lo[1], box.hi[2] - box.lo[2]};
  // face pair normal to axis a has area ext[b]*ext[c]
  const double areas[3] = {ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]};
  double u = rng.uniform() * (areas[0] + areas[1] + areas[2]);
  int axis = 0;
  while (axis < 2 && u >= areas[axis]) u -= areas[axis++];
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = rng.uniform(box.lo[i], box.hi[i]);
  p[axis] = rng.uniform() < 0.5 ? box.lo[axis] : box.hi[axis];
  return p;
}

Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
  const double r1 = std::sqrt(rng.uniform());
  const double r2 = rng.uniform();
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = (1 - r1) * a[i] + r1 * (1 - r2) * b[i] + r1 * r2 * c[i];
  return p;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

Vec3 disk_point(double radius, double z, Rng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double t = 2 * kPi * rng.uniform();
  return {r * std::cos(t), r * std::sin(t), z};
}

std::vector<Vec3> raw_surface(ShapeClass shape, std::size_t n, Rng& rng) {
  std::vector<Vec3> pts;
  pts.reserve(n);
  switch (shape) {
    case ShapeClass::sphere: {
      // antipodal pairs put the centroid exactly at the center
      while (pts.size() + 1 < n) {
        Vec3 u = random_unit(rng);
        pts.push_back(u);
        pts.push_back({-u[0], -u[1], -u[2]});
      }
      if (pts.size() < n) pts.push_back(random_unit(rng));
      break;
    }
    case ShapeClass::cube: {
      const Box box{{-1, -1, -1}, {1, 1, 1}};
      for (std::size_t i = 0; i < n; ++i) pts.push_back(sample_box_surface(box, rng));
      break;
    }
    case ShapeClass::cylinder: {
      const double a = 0.6, h = 1.0;
      const double lateral = 2 * kPi * a * 2 * h, caps = 2 * kPi * a * a;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() * (lateral + caps) < lateral) {
          const double t = 2 * kPi * rng.uniform();
          pts.push_back({a * std::cos(t), a * std::sin(t), rng.uniform(-h, h)});
        } else {
          pts.push_back(disk_point(a, rng.uniform() < 0.5 ? -h : h, rng));
        }
      }
      break;
    }
    case ShapeClass::cone: {
      const double b = 0.8, height = 2.0;
      const double lateral = kPi * b * std::sqrt(b * b + height * height), base = kPi * b * b;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() * (lateral + base) < lateral) {
          const double s = std::sqrt(rng.uniform());  // fraction of the way from apex
          const double t = 2 * kPi * rng.uniform();
          pts.push_back({b * s * std::cos(t), b * s * std::sin(t), 1.0 - height * s});
        } else {
          pts.push_back(disk_point(b, -1.0, rng));
        }
      }
      break;
    }
    case ShapeClass::torus: {
      const double big = 0.75, small = 0.3;
      while (pts.size() < n) {
        const double u = 2 * kPi * rng.uniform();
        const double v = 2 * kPi * rng.uniform();
        if (rng.uniform() * (big + small) > big + small * std::cos(v)) continue;
        const double ring = big + small * std::cos(v);
        pts.push_back({ring * std::cos(u), ring * std::sin(u), small * std::sin(v)});
      }
      break;
    }
    case ShapeClass::capsule: {
      const double c = 0.45, half = 0.65;
      const double lateral = 2 * kPi * c * 2 * half, caps = 4 * kPi * c * c;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() * (lateral + caps) < lateral) {
          const double t = 2 * kPi * rng.uniform();
          pts.push_back({c * std::cos(t), c * std::sin(t), rng.uniform(-half, half)});
        } else {
          Vec3 u = random_unit(rng);
          pts.push_back({c * u[0], c * u[1], c * u[2] + (u[2] >= 0 ? half : -half)});
        }
      }
      break;
    }
    case ShapeClass::pyramid: {
      const double s = 1.0, zb = -0.5;
      const Vec3 apex{0, 0, 0.7};
      const std::array<Vec3, 4> base = {Vec3{-s, -s, zb}, Vec3{s, -s, zb}, Vec3{s, s, zb},
                                        Vec3{-s, s, zb}};
      std::array<double, 5> areas{};
      for (int f = 0; f < 4; ++f) areas[f] = triangle_area(base[f], base[(f + 1) % 4], apex);
      areas[4] = (2 * s) * (2 * s);
      double total = 0;
      for (double a : areas) total += a;
      for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform() * total;
        int f = 0;
        while (f < 4 && u >= areas[f]) u -= areas[f++];
        if (f < 4) {
          pts.push_back(sample_triangle(apex, base[f], base[(f + 1) % 4], rng));
        } else {
          pts.push_back({rng.uniform(-s, s), rng.uniform(-s, s), zb});
        }
      }
      break;
    }
    case ShapeClass::ell: {
      const Box foot{{-1, -0.3, -1}, {1, 0.3, -0.4}};
      const Box post{{-1, -0.3, -1}, {-0.4, 0.3, 1}};
      const double af = foot.area(), ap = post.area();
      while (pts.size() < n) {
        const bool on_foot = rng.uniform() * (af + ap) < af;
        const Vec3 p = sample_box_surface(on_foot ? foot : post, rng);
        if ((on_foot ? post : foot).strictly_contains(p)) continue;
        pts.push_back(p);
      }
      break;
    }
  }
  return pts;
}

// Uniform random rotation from a random unit quaternion.
std::array<double, 9> random_rotation(Rng& rng) {
  double q[4];
  double norm = 0;
  do {
    norm = 0;
    for (double& x : q) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& x : q) x /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

}  // namespace

std::string_view shape_class_name(ShapeClass c) { return kNames[static_cast<std::size_t>(c)]; }

ShapeClass parse_shape_class(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<ShapeClass>(i);
  throw std::invalid_argument("unknown shape class '" + std::string(name) + "'");
}

std::vector<ShapeClass> all_shape_classes() {
  std::vector<ShapeClass> out;
  for (std::size_t i = 0; i < kShapeClassCount; ++i) out.push_back(static_cast<ShapeClass>(i));
  return out;
}

PointCloud sample_shape(const ShapeSpec& spec, int label, std::uint64_t seed) {
  if (spec.points < 64) throw std::invalid_argument("ShapeSpec: need at least 64 points");
  if (spec.noise < 0) throw std::invalid_argument("ShapeSpec: noise must be >= 0");
  if (spec.size_jitter < 0 || spec.size_jitter >= 1) {
    throw std::invalid_argument("ShapeSpec: size_jitter must be in [0, 1)");
  }
  Rng rng(seed);
  std::vector<Vec3> pts = raw_surface(spec.shape, spec.points, rng);

  Vec3 scale;
  if (spec.shape == ShapeClass::sphere) {
    const double s = rng.uniform(1 - spec.size_jitter, 1 + spec.size_jitter);
    scale = {s, s, s};
  } else {
    for (double& s : scale) s = rng.uniform(1 - spec.size_jitter, 1 + spec.size_jitter);
  }
  const auto rot = random_rotation(rng);
  for (auto& p : pts) {
    const Vec3 q{p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]};
    for (int r = 0; r < 3; ++r) p[r] = rot[3 * r] * q[0] + rot[3 * r + 1] * q[1] + rot[3 * r + 2] * q[2];
    if (spec.noise > 0)
      for (double& x : p) x += spec.noise * rng.normal();
  }
  return normalize_unit_sphere(PointCloud(std::move(pts), label)).cloud;
}

SplitDataset synth_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.classes.size() < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
  SplitDataset out;
  auto fill = [&](Dataset& ds, std::string_view split, std::size_t per_class) {
    // interleave classes so prefixes of the split stay balanced
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        ShapeSpec shape{spec.classes[c], spec.size_jitter, spec.noise, spec.points};
        const std::uint64_t s = derive_seed(seed, split, c * 1000003ULL + i);
        ds.clouds.push_back(sample_shape(shape, static_cast<int>(c), s));
      }
    }
  };
  fill(out.train, "train", spec.train_per_class);
  fill(out.test, "test", spec.test_per_class);
  return out;
}

void save_dataset(const SplitDataset& data, const std::filesystem::path& dir) {
  for (auto [split, ds] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    const auto sub = dir / split;
    std::filesystem::create_directories(sub);
    for (std::size_t i = 0; i < ds->size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.xyz", i);
      save_xyz(ds->clouds[i], sub / name);
    }
  }
}

SplitDataset load_dataset(const std::filesystem::path& dir) {
  SplitDataset out;
  for (auto [split, ds] : {std::pair{"train", &out.train}, std::pair{"test", &out.test}}) {
    const auto sub = dir / split;
    if (!std::filesystem::is_directory(sub)) {
      throw std::runtime_error("dataset directory missing " + sub.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(sub))
      if (e.path().extension() == ".xyz") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds->clouds.push_back(load_xyz(f));
  }
  return out;
}

}  // namespace matadv
