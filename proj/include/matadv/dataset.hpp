#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "matadv/geom.hpp"

namespace matadv {

/// Labeled clouds. Order is significant (it fixes per-cloud seeds).
struct Dataset {
  std::vector<PointCloud> clouds;

  std::size_t size() const { return clouds.size(); }
  bool empty() const { return clouds.empty(); }
  std::vector<int> labels() const;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

enum class ShapeClass { sphere, cube, cylinder, cone, torus, capsule, pyramid, ell };

inline constexpr std::size_t kShapeClassCount = 8;

std::string_view shape_class_name(ShapeClass c);
/// Throws std::invalid_argument on an unknown name.
ShapeClass parse_shape_class(std::string_view name);
std::vector<ShapeClass> all_shape_classes();

/// One procedural sample: a class surface with per-axis size jitter, a
/// uniformly random rotation and Gaussian noise, normalized to the unit sphere.
struct ShapeSpec {
  ShapeClass shape = ShapeClass::sphere;
  double size_jitter = 0.15;  // per-axis scale in [1 - j, 1 + j]; spheres scale isotropically
  double noise = 0.01;        // Gaussian sigma, applied before normalization
  std::size_t points = 256;
};

PointCloud sample_shape(const ShapeSpec& spec, int label, std::uint64_t seed);

struct DatasetSpec {
  std::vector<ShapeClass> classes = all_shape_classes();
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 25;
  std::size_t points = 256;
  double size_jitter = 0.15;
  double noise = 0.01;
};

/// Class index = position in spec.classes. Deterministic per seed.
SplitDataset synth_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// One .xyz file per cloud (with label header) under dir/train and dir/test.
void save_dataset(const SplitDataset& data, const std::filesystem::path& dir);
SplitDataset load_dataset(const std::filesystem::path& dir);

}  // namespace matadv
