#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace matadv {

using Vec3 = std::array<double, 3>;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// N x 3 coordinates with an optional class label. Always nonempty and finite.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Vec3> points, std::optional<int> label = std::nullopt);

  std::size_t size() const { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }
  const std::optional<int>& label() const { return label_; }
  void set_label(std::optional<int> label) { label_ = label; }

  /// Row-major copy, 3N values.
  std::vector<double> flat() const;
  static PointCloud from_flat(std::span<const double> xyz, std::optional<int> label = std::nullopt);

  /// Subsequence in the given index order.
  PointCloud select(std::span<const std::size_t> indices) const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
  std::optional<int> label_;
};

/// Ordered distinct indices into some cloud.
using IndexSet = std::vector<std::size_t>;

/// Dense |query| x k neighbor table.
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::size_t> data;

  std::size_t operator()(std::size_t i, std::size_t j) const { return data[i * k + j]; }
  std::span<const std::size_t> row(std::size_t i) const { return {data.data() + i * k, k}; }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);

struct NormalizedCloud {
  PointCloud cloud;
  bool degenerate = false;  // all points coincided; cloud is all zeros
};

NormalizedCloud normalize_unit_sphere(const PointCloud& cloud);

/// Greedy farthest point sampling. The first index comes from the seeded
/// RNG; later picks maximize the min-distance to the chosen set, lowest
/// index on ties.
IndexSet farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

/// k nearest base points per query row, ascending distance, lowest index on
/// ties. A query point that is also in base finds itself.
IndexMatrix knn(const PointCloud& query, const PointCloud& base, std::size_t k);
IndexMatrix knn(std::span<const Vec3> query, std::span<const Vec3> base, std::size_t k);

/// k nearest neighbors of every point in the cloud, the point itself excluded.
IndexMatrix knn_excluding_self(std::span<const Vec3> points, std::size_t k);

/// Deterministic Fibonacci-lattice unit directions; a pure function of s.
std::vector<Vec3> fibonacci_directions(std::size_t s);

/// center + radius * u_j for the s lattice directions.
std::vector<Vec3> sample_sphere_surface(const Vec3& center, double radius, std::size_t s);

}  // namespace matadv
