#include "skelebones/spatial.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace skelebones {

KdTree::KdTree(Points points, int leaf_size) : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
  order_.resize(points_.cols());
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[i]));
    hi = hi.cwiseMax(points_.col(order_[i]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi(axis) == lo(axis)) return id;

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double pa = points_(axis, a);
    const double pb = points_(axis, b);
    return pa < pb || (pa == pb && a < b);
  });
  const double split = points_(axis, order_[mid]);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KdTree::search(int node_id, const Vec3& query, size_t k, int exclude,
                    std::vector<std::pair<double, int>>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      if (idx == exclude) continue;
      const std::pair<double, int> cand{(points_.col(idx) - query).squaredNorm(), idx};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double diff = query(node.axis) - node.split;
  const int first = diff < 0.0 ? node.left : node.right;
  const int second = diff < 0.0 ? node.right : node.left;
  search(first, query, k, exclude, heap);
  // <= keeps equal-distance candidates on the far side reachable for index tie-breaks
  if (heap.size() < k || diff * diff <= heap.front().first) search(second, query, k, exclude, heap);
}

std::vector<int> KdTree::knn(const Vec3& query, int k) const {
  std::vector<std::pair<double, int>> heap;
  if (k <= 0 || nodes_.empty()) return {};
  heap.reserve(k + 1);
  search(0, query, static_cast<size_t>(k), -1, heap);
  std::sort_heap(heap.begin(), heap.end());
  std::vector<int> out;
  out.reserve(heap.size());
  for (const auto& [d, i] : heap) out.push_back(i);
  return out;
}

int KdTree::nearest(const Vec3& query, double* squared_distance) const {
  std::vector<std::pair<double, int>> heap;
  if (nodes_.empty()) return -1;
  search(0, query, 1, -1, heap);
  if (squared_distance) *squared_distance = heap.front().first;
  return heap.front().second;
}

std::vector<std::vector<int>> KdTree::knn_graph(int k) const {
  std::vector<std::vector<int>> graph(points_.cols());
  std::vector<std::pair<double, int>> heap;
  for (Eigen::Index i = 0; i < points_.cols(); ++i) {
    heap.clear();
    search(0, points_.col(i), static_cast<size_t>(k), static_cast<int>(i), heap);
    std::sort_heap(heap.begin(), heap.end());
    for (const auto& [d, j] : heap) graph[i].push_back(j);
  }
  return graph;
}

}  // namespace skelebones
