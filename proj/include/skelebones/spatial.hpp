#pragma once

#include "skelebones/se3.hpp"

#include <vector>

namespace skelebones {

/// Static 3D kd-tree over a point block. Query results are ordered by
/// (squared distance, index), which makes ties deterministic.
class KdTree {
 public:
  explicit KdTree(Points points, int leaf_size = 8);

  int size() const { return static_cast<int>(points_.cols()); }
  const Points& points() const { return points_; }

  /// Up to k nearest points to `query`.
  std::vector<int> knn(const Vec3& query, int k) const;
  int nearest(const Vec3& query, double* squared_distance = nullptr) const;
  /// For every stored point, its k nearest other points.
  std::vector<std::vector<int>> knn_graph(int k) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search(int node, const Vec3& query, size_t k, int exclude, std::vector<std::pair<double, int>>& heap) const;

  Points points_;
  int leaf_size_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace skelebones
