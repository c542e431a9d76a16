#pragma once

#include <optional>
#include <vector>

#include "matadv/geom.hpp"
#include "matadv/tensor.hpp"

namespace matadv {

inline ad::Tensor to_tensor(const PointCloud& cloud) { return ad::Tensor({cloud.size(), 3}, cloud.flat()); }

inline std::vector<Vec3> to_points(const ad::Tensor& t) {
  if (t.rank() != 2 || t.cols() != 3) throw ad::ShapeError("expected an N x 3 tensor, got " + ad::to_string(t.shape()));
  std::vector<Vec3> pts(t.rows());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t(i, 0), t(i, 1), t(i, 2)};
  return pts;
}

inline PointCloud to_cloud(const ad::Tensor& t, std::optional<int> label = std::nullopt) {
  return PointCloud(to_points(t), label);
}

}  // namespace matadv
