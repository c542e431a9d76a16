#include "matadv/geom.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "matadv/rng.hpp"

namespace matadv {

PointCloud::PointCloud(std::vector<Vec3> points, std::optional<int> label)
    : points_(std::move(points)), label_(label) {
  if (points_.empty()) throw GeometryError("point cloud must contain at least one point");
  for (const auto& p : points_) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw GeometryError("point cloud contains a non-finite coordinate");
    }
  }
}

std::vector<double> PointCloud::flat() const {
  std::vector<double> out;
  out.reserve(points_.size() * 3);
  for (const auto& p : points_) out.insert(out.end(), p.begin(), p.end());
  return out;
}

PointCloud PointCloud::from_flat(std::span<const double> xyz, std::optional<int> label) {
  if (xyz.size() % 3 != 0) throw GeometryError("flat coordinate array length is not a multiple of 3");
  std::vector<Vec3> pts(xyz.size() / 3);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  return PointCloud(std::move(pts), label);
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  std::vector<Vec3> pts;
  pts.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= points_.size()) throw GeometryError("select: index out of range");
    pts.push_back(points_[i]);
  }
  return PointCloud(std::move(pts), label_);
}

namespace {

bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());

  std::vector<Vec3> pts;
  std::optional<int> label;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0].starts_with('#')) {
      // "# label <int>"; other comment lines are ignored
      std::vector<std::string_view> rest = tokens;
      if (rest[0] == "#") rest.erase(rest.begin());
      else rest[0].remove_prefix(1);
      if (!rest.empty() && rest[0] == "label") {
        int value = 0;
        if (rest.size() != 2) throw ParseError("malformed label header", lineno);
        auto [ptr, ec] = std::from_chars(rest[1].data(), rest[1].data() + rest[1].size(), value);
        if (ec != std::errc() || ptr != rest[1].data() + rest[1].size()) {
          throw ParseError("malformed label header", lineno);
        }
        label = value;
      }
      continue;
    }
    if (tokens.size() != 3) {
      throw ParseError("expected 3 coordinates, found " + std::to_string(tokens.size()), lineno);
    }
    Vec3 p{};
    for (int c = 0; c < 3; ++c) {
      if (!parse_double(tokens[c], p[c]) || !std::isfinite(p[c])) {
        throw ParseError("invalid coordinate '" + std::string(tokens[c]) + "'", lineno);
      }
    }
    pts.push_back(p);
  }
  if (in.bad()) throw std::runtime_error("read failure on " + path.string());
  if (pts.empty()) throw ParseError("file contains no points", lineno);
  return PointCloud(std::move(pts), label);
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  char buf[128];
  if (cloud.label()) out << "# label " << *cloud.label() << '\n';
  for (const auto& p : cloud.points()) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
  out.flush();
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

NormalizedCloud normalize_unit_sphere(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  Vec3 centroid{0, 0, 0};
  for (const auto& p : cloud.points())
    for (int c = 0; c < 3; ++c) centroid[c] += p[c];
  for (int c = 0; c < 3; ++c) centroid[c] /= static_cast<double>(n);

  std::vector<Vec3> pts(cloud.points().begin(), cloud.points().end());
  double max_norm = 0.0;
  for (auto& p : pts) {
    for (int c = 0; c < 3; ++c) p[c] -= centroid[c];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (max_norm <= std::numeric_limits<double>::min()) {
    for (auto& p : pts) p = {0, 0, 0};
    return {PointCloud(std::move(pts), cloud.label()), true};
  }
  for (auto& p : pts)
    for (int c = 0; c < 3; ++c) p[c] /= max_norm;
  return {PointCloud(std::move(pts), cloud.label()), false};
}

IndexSet farthest_point_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  const std::size_t n = cloud.size();
  if (m == 0 || m > n) {
    throw GeometryError("farthest_point_sample: need 1 <= m <= N (m=" + std::to_string(m) +
                        ", N=" + std::to_string(n) + ")");
  }
  Rng rng(seed);
  IndexSet chosen;
  chosen.reserve(m);
  chosen.push_back(rng.index(n));

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  taken[chosen[0]] = 1;
  while (chosen.size() < m) {
    const Vec3& last = cloud[chosen.back()];
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(cloud[i], last));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    taken[best] = 1;
    chosen.push_back(best);
  }
  return chosen;
}

IndexMatrix knn(std::span<const Vec3> query, std::span<const Vec3> base, std::size_t k) {
  if (k > base.size()) {
    throw GeometryError("knn: k=" + std::to_string(k) + " exceeds base size " +
                        std::to_string(base.size()));
  }
  IndexMatrix out{query.size(), k, std::vector<std::size_t>(query.size() * k)};
  if (k == 0) return out;
  // Sorted top-k by insertion. Candidates arrive in index order and only a
  // strictly smaller distance displaces an entry, so ties keep the lower index.
  std::vector<double> best_d(k);
  for (std::size_t i = 0; i < query.size(); ++i) {
    std::size_t* best_j = out.data.data() + i * k;
    std::size_t filled = 0;
    for (std::size_t j = 0; j < base.size(); ++j) {
      const double d = squared_distance(query[i], base[j]);
      if (filled == k && !(d < best_d[k - 1])) continue;
      std::size_t pos = filled < k ? filled++ : k - 1;
      while (pos > 0 && d < best_d[pos - 1]) {
        best_d[pos] = best_d[pos - 1];
        best_j[pos] = best_j[pos - 1];
        --pos;
      }
      best_d[pos] = d;
      best_j[pos] = j;
    }
  }
  return out;
}

IndexMatrix knn(const PointCloud& query, const PointCloud& base, std::size_t k) {
  return knn(query.points(), base.points(), k);
}

IndexMatrix knn_excluding_self(std::span<const Vec3> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k >= n) {
    throw GeometryError("knn_excluding_self: k=" + std::to_string(k) + " must be < N=" +
                        std::to_string(n));
  }
  IndexMatrix out{n, k, std::vector<std::size_t>(n * k)};
  if (k == 0) return out;
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back(squared_distance(points[i], points[j]), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out.data[i * k + j] = cand[j].second;
  }
  return out;
}

std::vector<Vec3> fibonacci_directions(std::size_t s) {
  std::vector<Vec3> dirs(s);
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t j = 0; j < s; ++j) {
    const double z = 1.0 - (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(s);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * static_cast<double>(j);
    dirs[j] = {r * std::cos(phi), r * std::sin(phi), z};
  }
  return dirs;
}

std::vector<Vec3> sample_sphere_surface(const Vec3& center, double radius, std::size_t s) {
  if (!(radius >= 0.0)) throw GeometryError("sample_sphere_surface: negative radius");
  if (s == 0) throw GeometryError("sample_sphere_surface: s must be >= 1");
  auto dirs = fibonacci_directions(s);
  for (auto& d : dirs)
    for (int c = 0; c < 3; ++c) d[c] = center[c] + radius * d[c];
  return dirs;
}

}  // namespace matadv
