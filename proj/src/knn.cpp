// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/knn.hpp"

#include <algorithm>
#include <numeric>

namespace asplat {

struct KdTree3::Best {
  struct Entry {
    double d2;
    int index;
    bool operator<(const Entry& o) const {
      return d2 != o.d2 ? d2 < o.d2 : index < o.index;
    }
  };
  int k = 0;
  std::vector<Entry> entries;  // kept sorted ascending, size <= k

  double worst() const {
    return static_cast<int>(entries.size()) < k
               ? std::numeric_limits<double>::infinity()
               : entries.back().d2;
  }

  void offer(double d2, int index) {
    Entry e{d2, index};
    if (static_cast<int>(entries.size()) == k && !(e < entries.back())) return;
    auto it = std::lower_bound(entries.begin(), entries.end(), e);
    entries.insert(it, e);
    if (static_cast<int>(entries.size()) > k) entries.pop_back();
  }
};

KdTree3::KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()));
}

int KdTree3::build(std::vector<int>& idx, int lo, int hi) {
  if (lo >= hi) return -1;
  // Split along the widest extent of this subset.
  Vec3 mn = points_[idx[lo]], mx = mn;
  for (int i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(points_[idx[i]]);
    mx = mx.cwiseMax(points_[idx[i]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = (lo + hi) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     const double ca = points_[a][axis], cb = points_[b][axis];
                     return ca != cb ? ca < cb : a < b;
                   });
  Node node;
  node.point = idx[mid];
  node.axis = axis;
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(idx, lo, mid);
  const int right = build(idx, mid + 1, hi);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void KdTree3::search(int node, const Vec3& q, Best& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  best.offer((q - p).squaredNorm(), n.point);
  const double delta = q[n.axis] - p[n.axis];
  const int near = delta < 0.0 ? n.left : n.right;
  const int far = delta < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (delta * delta <= best.worst()) search(far, q, best);
}

void KdTree3::knn(const Vec3& q, int k, std::vector<int>& out) const {
  out.clear();
  if (k <= 0 || points_.empty()) return;
  Best best;
  best.k = std::min<int>(k, static_cast<int>(points_.size()));
  best.entries.reserve(best.k + 1);
  search(root_, q, best);
  out.reserve(best.entries.size());
  for (const auto& e : best.entries) out.push_back(e.index);
}

}  // namespace asplat
