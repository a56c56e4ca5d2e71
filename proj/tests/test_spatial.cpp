#include "skelebones/spatial.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace skelebones;

namespace {

std::vector<int> brute_knn(const Points& p, const Vec3& q, int k, int exclude = -1) {
  std::vector<std::pair<double, int>> d;
  for (int i = 0; i < p.cols(); ++i) {
    if (i != exclude) d.emplace_back((p.col(i) - q).squaredNorm(), i);
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(d.size())); ++i) out.push_back(d[i].second);
  return out;
}

}  // namespace

TEST_CASE("kd-tree queries match brute force") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points p(3, 500);
  for (int i = 0; i < p.cols(); ++i) p.col(i) = Vec3(u(rng), u(rng), u(rng));
  const KdTree tree(p);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 q(u(rng), u(rng), u(rng));
    CHECK(tree.knn(q, 7) == brute_knn(p, q, 7));
    CHECK(tree.nearest(q) == brute_knn(p, q, 1)[0]);
  }
  const auto graph = tree.knn_graph(5);
  for (int i = 0; i < 50; ++i) CHECK(graph[i] == brute_knn(p, p.col(i), 5, i));
}

TEST_CASE("kd-tree ties resolve to the lower index") {
  Points p(3, 4);
  p << 1, -1, 0, 0, 0, 0, 1, -1, 0, 0, 0, 0;
  const KdTree tree(p);
  CHECK(tree.knn(Vec3::Zero(), 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(tree.knn(Vec3::Zero(), 10).size() == 4);
}
