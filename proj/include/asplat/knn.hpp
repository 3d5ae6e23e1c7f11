// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "asplat/geom.hpp"

namespace asplat {

/// Static median-split kd-tree over 3D points. Queries are deterministic:
/// distance ties are broken by the smaller point index, so the returned
/// neighbor set does not depend on traversal order or build details.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points);

  int size() const { return static_cast<int>(points_.size()); }
  const Vec3& point(int i) const { return points_[i]; }

  /// Indices of the k nearest points to q, sorted by (distance, index).
  /// Returns fewer than k entries only when the tree holds fewer points.
  void knn(const Vec3& q, int k, std::vector<int>& out) const;

 private:
  struct Node {
    int point = -1;  // index into points_
    int axis = 0;
    int left = -1, right = -1;
  };

  struct Best;  // bounded candidate list, defined in the .cpp

  int build(std::vector<int>& idx, int lo, int hi);
  void search(int node, const Vec3& q, Best& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace asplat
