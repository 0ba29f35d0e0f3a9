#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "dhhqa/mesh.hpp"

namespace dhhqa {

// Exact nearest-neighbor index over 3D points. Median-split construction,
// branch-and-bound query. Ties resolved to the lowest point index.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : pts_(points) {
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(pts_.size() * 2 + 1);
    if (!pts_.empty()) root_ = build(0, pts_.size());
  }

  // returns (index, squared distance)
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    std::size_t best = pts_.size();
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return {best, best_d2};
  }

 private:
  struct Node {
    int axis = -1;        // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // leaf range in order_
  };

  static constexpr std::size_t kLeafSize = 16;

  int build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size() - 1);
    }
    Vec3 lo = pts_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i)
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], pts_[order_[i]][k]);
        hi[k] = std::max(hi[k], pts_[order_[i]][k]);
      }
    int axis = 0;
    for (int k = 1; k < 3; ++k)
      if (hi[k] - lo[k] > hi[axis] - lo[axis]) axis = k;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    node.axis = axis;
    node.split = pts_[order_[mid]][axis];
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search(int ni, const Vec3& q, std::size_t& best, double& best_d2) const {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const Vec3 d = pts_[idx] - q;
        const double d2 = dot(d, d);
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      }
      return;
    }
    const double delta = q[node.axis] - node.split;
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    search(near, q, best, best_d2);
    if (delta * delta <= best_d2) search(far, q, best, best_d2);
  }

  const std::vector<Vec3>& pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace dhhqa
