#include "skelebones/skeletonizer.hpp"

#include "skelebones/errors.hpp"
#include "skelebones/spatial.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

namespace skelebones {

namespace {

double bbox_diag(const Eigen::MatrixX3d& p) { return (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm(); }

double median_anisotropy(const Eigen::MatrixX3d& p, const std::vector<std::vector<int>>& graph) {
  std::vector<double> values(graph.size());
  for (size_t i = 0; i < graph.size(); ++i) {
    Eigen::RowVector3d mean = p.row(static_cast<Eigen::Index>(i));
    for (int j : graph[i]) mean += p.row(j);
    mean /= static_cast<double>(graph[i].size() + 1);
    Mat3 cov = Mat3::Zero();
    auto add = [&](Eigen::Index r) {
      const Vec3 d = (p.row(r) - mean).transpose();
      cov += d * d.transpose();
    };
    add(static_cast<Eigen::Index>(i));
    for (int j : graph[i]) add(j);
    const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov, Eigen::EigenvaluesOnly).eigenvalues();
    values[i] = ev(2) > 0.0 ? std::sqrt(std::max(ev(1), 0.0) / ev(2)) : 0.0;
  }
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

using WeightedEdge = std::tuple<double, int, int>;

// Kruskal over `edges`, then over the complete graph if components remain.
std::vector<std::pair<int, int>> spanning_tree(const Points& nodes, std::vector<WeightedEdge> edges) {
  const int n = static_cast<int>(nodes.cols());
  std::sort(edges.begin(), edges.end());
  DisjointSet sets(n);
  std::vector<std::pair<int, int>> tree;
  for (const auto& [w, a, b] : edges) {
    if (sets.unite(a, b)) tree.emplace_back(a, b);
  }
  if (static_cast<int>(tree.size()) < n - 1) {
    std::vector<WeightedEdge> all;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (sets.find(a) != sets.find(b)) all.emplace_back((nodes.col(a) - nodes.col(b)).norm(), a, b);
      }
    }
    std::sort(all.begin(), all.end());
    for (const auto& [w, a, b] : all) {
      if (sets.unite(a, b)) tree.emplace_back(a, b);
    }
  }
  return tree;
}

std::vector<std::vector<int>> adjacency_of(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(n);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

// Mutable working graph used while simplifying the sample graph.
struct SampleGraph {
  std::vector<std::vector<int>> members;  // vertex indices per node
  std::vector<std::pair<int, int>> edges;

  int size() const { return static_cast<int>(members.size()); }

  // Drops nodes flagged in `remove`, renumbering the rest.
  void erase(const std::vector<bool>& remove) {
    std::vector<int> remap(members.size(), -1);
    std::vector<std::vector<int>> kept;
    for (size_t i = 0; i < members.size(); ++i) {
      if (remove[i]) continue;
      remap[i] = static_cast<int>(kept.size());
      kept.push_back(std::move(members[i]));
    }
    std::vector<std::pair<int, int>> next;
    for (const auto& [a, b] : edges) {
      if (remap[a] >= 0 && remap[b] >= 0) next.emplace_back(remap[a], remap[b]);
    }
    members = std::move(kept);
    edges = std::move(next);
  }
};

Points centroids(const Points& positions, const std::vector<std::vector<int>>& members) {
  Points out(3, static_cast<Eigen::Index>(members.size()));
  for (size_t j = 0; j < members.size(); ++j) {
    Vec3 c = Vec3::Zero();
    for (int i : members[j]) c += positions.col(i);
    out.col(static_cast<Eigen::Index>(j)) = c / static_cast<double>(std::max<size_t>(members[j].size(), 1));
  }
  return out;
}

// Hands the vertices of removed nodes to the nearest surviving node.
void reassign_orphans(SampleGraph& g, const Points& positions, const std::vector<bool>& remove) {
  std::vector<int> orphans;
  for (size_t j = 0; j < remove.size(); ++j) {
    if (remove[j]) orphans.insert(orphans.end(), g.members[j].begin(), g.members[j].end());
  }
  g.erase(remove);
  if (orphans.empty()) return;
  const KdTree tree(centroids(positions, g.members));
  for (int i : orphans) g.members[tree.nearest(positions.col(i))].push_back(i);
  for (auto& m : g.members) std::sort(m.begin(), m.end());
}

// Removes one leaf path of at most `max_edges` edges ending at a branch node.
bool prune_one_spur(SampleGraph& g, const Points& positions, int max_edges) {
  const int n = g.size();
  if (n <= 2) return false;
  const auto adj = adjacency_of(n, g.edges);
  int best_leaf = -1;
  std::vector<int> best_path;
  for (int leaf = 0; leaf < n; ++leaf) {
    if (adj[leaf].size() != 1) continue;
    std::vector<int> path{leaf};
    int prev = leaf;
    int cur = adj[leaf][0];
    while (adj[cur].size() == 2) {
      path.push_back(cur);
      const int next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
      prev = cur;
      cur = next;
    }
    if (adj[cur].size() < 3 || static_cast<int>(path.size()) > max_edges) continue;
    if (best_leaf < 0 || path.size() < best_path.size()) {
      best_leaf = leaf;
      best_path = path;
    }
  }
  if (best_leaf < 0) return false;
  std::vector<bool> remove(n, false);
  for (int j : best_path) remove[j] = true;
  reassign_orphans(g, positions, remove);
  return true;
}

// Merges two branch nodes joined by a path of at most two edges into one node.
bool merge_close_branches(SampleGraph& g) {
  const int n = g.size();
  const auto adj = adjacency_of(n, g.edges);
  for (int a = 0; a < n; ++a) {
    if (adj[a].size() < 3) continue;
    for (int m : adj[a]) {
      std::vector<int> group;
      if (adj[m].size() >= 3) {
        group = {a, m};
      } else {
        for (int b : adj[m]) {
          if (b != a && adj[b].size() >= 3) group = {a, m, b};
        }
      }
      if (group.empty()) continue;
      std::sort(group.begin(), group.end());
      const int keep = group.front();
      std::vector<int> remap(n);
      std::iota(remap.begin(), remap.end(), 0);
      std::vector<bool> remove(n, false);
      for (size_t k = 1; k < group.size(); ++k) {
        const int j = group[k];
        remap[j] = keep;
        remove[j] = true;
        g.members[keep].insert(g.members[keep].end(), g.members[j].begin(), g.members[j].end());
        g.members[j].clear();
      }
      std::sort(g.members[keep].begin(), g.members[keep].end());
      std::set<std::pair<int, int>> merged;
      for (const auto& [x, y] : g.edges) {
        const int u = remap[x];
        const int v = remap[y];
        if (u != v) merged.emplace(std::min(u, v), std::max(u, v));
      }
      g.edges.assign(merged.begin(), merged.end());
      g.erase(remove);
      return true;
    }
  }
  return false;
}

int nearest_column(const Points& pts, const Vec3& q) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const double d = (pts.col(j) - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

// Hop distances from `src`, limited to `max_hops`.
std::vector<int> hops_from(const std::vector<std::vector<int>>& adj, int src, int max_hops) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> queue{src};
  dist[src] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist[u] == max_hops) continue;
    for (int v : adj[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

Eigen::MatrixXd averaging_operator(const std::vector<std::vector<int>>& members, int n) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(members.size()), n);
  for (size_t j = 0; j < members.size(); ++j) {
    for (int i : members[j]) a(static_cast<Eigen::Index>(j), i) = 1.0 / static_cast<double>(members[j].size());
  }
  return a;
}

}  // namespace

LaplacianContraction::LaplacianContraction(const Points& canonical, const ContractionParams& params)
    : params_(params) {
  const int n = static_cast<int>(canonical.cols());
  if (params.knn < 1 || n <= params.knn) throw ShapeError("contraction needs more points than neighbours");
  graph_ = KdTree(canonical).knn_graph(params.knn);

  std::vector<Eigen::Triplet<double>> triplets;
  for (int i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, 1.0);
    const double w = 1.0 / static_cast<double>(graph_[i].size());
    for (int j : graph_[i]) triplets.emplace_back(i, j, -w);
  }
  Eigen::SparseMatrix<double> lap(n, n);
  lap.setFromTriplets(triplets.begin(), triplets.end());
  const Eigen::SparseMatrix<double> ltl = Eigen::SparseMatrix<double>(lap.transpose()) * lap;
  Eigen::SparseMatrix<double> eye(n, n);
  eye.setIdentity();

  Eigen::MatrixX3d p = canonical.transpose();
  const double diag0 = bbox_diag(p);
  const double wh2 = params.attraction_weight * params.attraction_weight;
  double wl = params.contraction_weight;
  for (int it = 1; it <= params.max_iterations; ++it) {
    auto solver = std::make_unique<Solver>();
    solver->compute(Eigen::SparseMatrix<double>(wl * wl * ltl + wh2 * eye));
    if (solver->info() != Eigen::Success) throw ContractionFailed("contraction system factorization failed", it);
    p = solver->solve(Eigen::MatrixX3d(wh2 * p));
    if (!p.allFinite() || bbox_diag(p) > params.divergence_ratio * diag0) {
      throw ContractionFailed("contraction diverged at iteration " + std::to_string(it), it);
    }
    solvers_.push_back(std::move(solver));
    wl *= params.growth;
    if (median_anisotropy(p, graph_) < params.anisotropy_stop) break;
  }
  contracted_ = p.transpose();
  spdlog::debug("contraction: {} iterations", solvers_.size());
}

LaplacianContraction::~LaplacianContraction() = default;
LaplacianContraction::LaplacianContraction(LaplacianContraction&&) noexcept = default;
LaplacianContraction& LaplacianContraction::operator=(LaplacianContraction&&) noexcept = default;

Points LaplacianContraction::contract(const Points& frame) const {
  const double wh2 = params_.attraction_weight * params_.attraction_weight;
  Eigen::MatrixX3d p = frame.transpose();
  for (const auto& solver : solvers_) p = solver->solve(Eigen::MatrixX3d(wh2 * p));
  return p.transpose();
}

Eigen::MatrixXd LaplacianContraction::contract_transpose(const Eigen::MatrixXd& rhs) const {
  const double wh2 = params_.attraction_weight * params_.attraction_weight;
  Eigen::MatrixXd x = rhs;
  for (auto it = solvers_.rbegin(); it != solvers_.rend(); ++it) x = (*it)->solve(Eigen::MatrixXd(wh2 * x));
  return x;
}

std::vector<std::vector<int>> CurveSkeleton::adjacency() const { return adjacency_of(size(), edges); }

double CurveSkeleton::mean_edge_length() const {
  if (edges.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [a, b] : edges) total += (samples.col(a) - samples.col(b)).norm();
  return total / static_cast<double>(edges.size());
}

std::string CurveSkeleton::check() const {
  if (size() == 0) return "skeleton has no samples";
  if (!samples.allFinite()) return "skeleton samples are not finite";
  DisjointSet sets(size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= size() || b >= size()) return "skeleton edge index out of range";
    sets.unite(a, b);
  }
  for (int j = 1; j < size(); ++j) {
    if (sets.find(j) != sets.find(0)) return "skeleton graph is disconnected";
  }
  return {};
}

CurveSkeleton extract_curve_skeleton(const Points& canonical, const SkeletonParams& params) {
  const int n = static_cast<int>(canonical.cols());
  if (params.samples < 1) throw UsageError("skeleton sample count must be >= 1");
  const LaplacianContraction contraction(canonical, params.contraction);
  const Points& q = contraction.contracted();

  // Farthest-point sampling, seeded at the point farthest from the centroid.
  const int m = std::min(params.samples, n);
  const Vec3 centroid = q.rowwise().mean();
  std::vector<double> dist(n);
  for (int i = 0; i < n; ++i) dist[i] = (q.col(i) - centroid).squaredNorm();
  std::vector<int> seeds;
  int next = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
  for (int s = 0; s < m; ++s) {
    seeds.push_back(next);
    for (int i = 0; i < n; ++i) dist[i] = std::min(dist[i], (q.col(i) - q.col(next)).squaredNorm());
    next = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  }

  Points seed_pos(3, m);
  for (int s = 0; s < m; ++s) seed_pos.col(s) = q.col(seeds[s]);
  SampleGraph g;
  {
    const KdTree tree(seed_pos);
    std::vector<std::vector<int>> members(m);
    for (int i = 0; i < n; ++i) members[tree.nearest(q.col(i))].push_back(i);
    for (auto& mem : members) {
      if (!mem.empty()) g.members.push_back(std::move(mem));
    }
  }

  // Sample adjacency from canonical neighbour links crossing correspondence sets.
  {
    std::vector<int> owner(n);
    for (int j = 0; j < g.size(); ++j) {
      for (int i : g.members[j]) owner[i] = j;
    }
    const Points pos = centroids(q, g.members);
    std::map<std::pair<int, int>, double> links;
    const auto& graph = contraction.graph();
    for (int i = 0; i < n; ++i) {
      for (int k : graph[i]) {
        const int a = owner[i];
        const int b = owner[k];
        if (a != b) links[{std::min(a, b), std::max(a, b)}] = (pos.col(a) - pos.col(b)).norm();
      }
    }
    std::vector<WeightedEdge> edges;
    for (const auto& [key, w] : links) edges.emplace_back(w, key.first, key.second);
    g.edges = spanning_tree(pos, std::move(edges));
  }

  while (prune_one_spur(g, q, params.spur_edges)) {
  }
  while (merge_close_branches(g)) {
  }

  CurveSkeleton skel;
  skel.samples = centroids(q, g.members);
  skel.correspondence = g.members;
  skel.edges.clear();
  for (auto [a, b] : g.edges) skel.edges.emplace_back(std::min(a, b), std::max(a, b));
  std::sort(skel.edges.begin(), skel.edges.end());
  skel.vertex_sample.assign(n, -1);
  for (int j = 0; j < skel.size(); ++j) {
    for (int i : skel.correspondence[j]) skel.vertex_sample[i] = j;
  }
  skel.frame_operator = contraction.contract_transpose(averaging_operator(skel.correspondence, n).transpose()).transpose();
  spdlog::debug("skeleton: {} samples, {} edges", skel.size(), skel.edges.size());
  return skel;
}

CurveSkeleton skeleton_from_samples(const Points& canonical, const Points& samples,
                                    const std::vector<std::pair<int, int>>& edges) {
  CurveSkeleton skel;
  skel.samples = samples;
  for (auto [a, b] : edges) skel.edges.emplace_back(std::min(a, b), std::max(a, b));
  std::sort(skel.edges.begin(), skel.edges.end());
  if (const std::string err = skel.check(); !err.empty()) throw ShapeError("imported skeleton: " + err);
  const KdTree tree(samples);
  skel.correspondence.assign(skel.size(), {});
  skel.vertex_sample.resize(canonical.cols());
  for (Eigen::Index i = 0; i < canonical.cols(); ++i) {
    const int j = tree.nearest(canonical.col(i));
    skel.vertex_sample[i] = j;
    skel.correspondence[j].push_back(static_cast<int>(i));
  }
  return skel;
}

Points frame_skeleton(const CurveSkeleton& skel, const Points& canonical, const Points& frame) {
  if (skel.frame_operator.size() > 0) {
    if (skel.frame_operator.cols() != frame.cols()) throw ShapeError("frame_skeleton: vertex count mismatch");
    return frame * skel.frame_operator.transpose();
  }
  Points out(3, skel.size());
  for (int j = 0; j < skel.size(); ++j) {
    const auto& mem = skel.correspondence[j];
    Points src(3, mem.size());
    Points dst(3, mem.size());
    for (size_t a = 0; a < mem.size(); ++a) {
      src.col(a) = canonical.col(mem[a]);
      dst.col(a) = frame.col(mem[a]);
    }
    if (mem.empty()) {
      out.col(j) = skel.samples.col(j);
      continue;
    }
    try {
      out.col(j) = fit_rigid(src, dst).apply(Vec3(skel.samples.col(j)));
    } catch (const DegenerateConfiguration&) {
      out.col(j) = skel.samples.col(j) + dst.rowwise().mean() - src.rowwise().mean();
    }
  }
  return out;
}

Eigen::MatrixXd pull_back_weights(const CurveSkeleton& skel, const SkinningMatrix& weights) {
  if (static_cast<int>(skel.vertex_sample.size()) != weights.vertices()) {
    throw ShapeError("pull_back_weights: skeleton and weights cover different vertex counts");
  }
  const int m = skel.size();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, weights.bones());
  std::vector<int> with;
  for (int j = 0; j < m; ++j) {
    if (skel.correspondence[j].empty()) continue;
    with.push_back(j);
    for (int i : skel.correspondence[j]) out.row(j) += weights.values.row(i);
    const double s = out.row(j).sum();
    if (s > 0.0) out.row(j) /= s;
  }
  if (with.empty()) throw ShapeError("pull_back_weights: no sample has corresponded vertices");
  for (int j = 0; j < m; ++j) {
    if (!skel.correspondence[j].empty()) continue;
    int best = with.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (int k : with) {
      const double d = (skel.samples.col(j) - skel.samples.col(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    out.row(j) = out.row(best);
  }
  return out;
}

std::vector<double> weight_gradient(const CurveSkeleton& skel) {
  if (skel.weights.rows() != skel.size()) throw ShapeError("weight_gradient: skeleton has no pulled-back weights");
  const double mean_edge = skel.mean_edge_length();
  std::vector<double> grad(skel.size(), 0.0);
  for (const auto& [a, b] : skel.edges) {
    const double len = (skel.samples.col(a) - skel.samples.col(b)).norm();
    if (!(len > 0.0)) continue;
    const double g = 0.5 * (skel.weights.row(a) - skel.weights.row(b)).lpNorm<1>() / len * mean_edge;
    grad[a] = std::max(grad[a], g);
    grad[b] = std::max(grad[b], g);
  }
  return grad;
}

JointDetection detect_joints(const CurveSkeleton& skel, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must lie in (0, 1]");
  JointDetection det;
  det.gradient = weight_gradient(skel);
  const auto adj = skel.adjacency();
  const int m = skel.size();

  std::vector<int> branches;
  std::vector<int> leaves;
  std::vector<int> candidates;
  for (int j = 0; j < m; ++j) {
    if (adj[j].size() >= 3) branches.push_back(j);
    if (adj[j].size() <= 1) leaves.push_back(j);
    if (det.gradient[j] > tau) candidates.push_back(j);
  }
  if (candidates.empty() && branches.empty()) {
    det.single_bone = true;
    return det;
  }

  std::vector<bool> blocked(m, false);
  std::vector<int> accepted;
  auto accept = [&](int j) {
    accepted.push_back(j);
    const auto d = hops_from(adj, j, 2);
    for (int k = 0; k < m; ++k) {
      if (d[k] >= 0) blocked[k] = true;
    }
  };
  std::stable_sort(branches.begin(), branches.end(),
                   [&](int a, int b) { return adj[a].size() > adj[b].size(); });
  for (int j : branches) {
    if (!blocked[j]) accept(j);
  }
  for (int j : leaves) accept(j);
  // One joint per connected run of above-threshold samples, at its gradient
  // peak; runs touching a structural joint's neighbourhood add nothing.
  std::vector<int> run(m, -1);
  std::vector<std::vector<int>> runs;
  for (int c : candidates) {
    if (run[c] >= 0) continue;
    runs.emplace_back();
    std::vector<int> stack{c};
    run[c] = static_cast<int>(runs.size()) - 1;
    while (!stack.empty()) {
      const int j = stack.back();
      stack.pop_back();
      runs.back().push_back(j);
      for (int k : adj[j]) {
        if (run[k] < 0 && det.gradient[k] > tau) {
          run[k] = run[c];
          stack.push_back(k);
        }
      }
    }
  }
  std::vector<int> peaks;
  for (const auto& r : runs) {
    int best = r.front();
    bool touched = false;
    for (int j : r) {
      touched = touched || blocked[j];
      if (det.gradient[j] > det.gradient[best] || (det.gradient[j] == det.gradient[best] && j < best)) best = j;
    }
    if (!touched) peaks.push_back(best);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return det.gradient[a] > det.gradient[b]; });
  for (int j : peaks) {
    if (blocked[j]) continue;
    accept(j);
    det.gradient_joints.push_back(j);
  }
  std::sort(accepted.begin(), accepted.end());
  accepted.erase(std::unique(accepted.begin(), accepted.end()), accepted.end());
  std::sort(det.gradient_joints.begin(), det.gradient_joints.end());
  det.joints = std::move(accepted);
  return det;
}

std::vector<std::pair<int, int>> KinematicTree::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < size(); ++j) {
    if (parent[j] >= 0) out.emplace_back(parent[j], j);
  }
  return out;
}

std::vector<std::vector<int>> KinematicTree::children() const {
  std::vector<std::vector<int>> out(size());
  for (int j = 0; j < size(); ++j) {
    if (parent[j] >= 0) out[parent[j]].push_back(j);
  }
  return out;
}

std::vector<int> KinematicTree::dfs_order() const {
  const auto kids = children();
  std::vector<int> order;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    order.push_back(j);
    for (auto it = kids[j].rbegin(); it != kids[j].rend(); ++it) stack.push_back(*it);
  }
  return order;
}

std::string KinematicTree::check() const {
  const int j_count = size();
  if (j_count == 0) return "tree has no joints";
  if (static_cast<int>(parent.size()) != j_count) return "parent array length differs from joint count";
  if (!sample.empty() && static_cast<int>(sample.size()) != j_count) return "sample array length differs from joint count";
  if (!joints.allFinite()) return "joint positions are not finite";
  int roots = 0;
  for (int j = 0; j < j_count; ++j) {
    if (parent[j] == -1) {
      ++roots;
      if (j != root) return "root index does not match the parentless joint";
    } else if (parent[j] < 0 || parent[j] >= j_count || parent[j] == j) {
      return "parent index out of range";
    }
  }
  if (roots != 1) return "tree must have exactly one root";
  if (static_cast<int>(dfs_order().size()) != j_count) return "parent graph is not a tree";
  return {};
}

bool KinematicTree::operator==(const KinematicTree& rhs) const {
  return joints.cols() == rhs.joints.cols() && joints == rhs.joints && parent == rhs.parent && root == rhs.root &&
         sample == rhs.sample;
}

KinematicTree KinematicTree::root_only(const Vec3& position, int sample) {
  KinematicTree t;
  t.joints = position;
  t.parent = {-1};
  t.root = 0;
  t.sample = {sample};
  return t;
}

KinematicTree build_tree(const CurveSkeleton& skel, const std::vector<int>& joint_samples, const Vec3& center_of_mass) {
  std::vector<int> js = joint_samples;
  std::sort(js.begin(), js.end());
  js.erase(std::unique(js.begin(), js.end()), js.end());
  if (js.empty()) throw UsageError("build_tree needs at least one joint");
  const int jn = static_cast<int>(js.size());

  KinematicTree tree;
  tree.joints.resize(3, jn);
  for (int j = 0; j < jn; ++j) tree.joints.col(j) = skel.samples.col(js[j]);
  tree.sample = js;

  std::map<int, int> joint_of;
  for (int j = 0; j < jn; ++j) joint_of[js[j]] = j;

  // Joint links along skeleton paths that pass through no other joint.
  const auto adj = skel.adjacency();
  std::map<std::pair<int, int>, double> links;
  for (int j = 0; j < jn; ++j) {
    std::vector<double> dist(skel.size(), -1.0);
    std::deque<int> queue{js[j]};
    dist[js[j]] = 0.0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int v : adj[u]) {
        if (dist[v] >= 0.0) continue;
        dist[v] = dist[u] + (skel.samples.col(u) - skel.samples.col(v)).norm();
        if (auto it = joint_of.find(v); it != joint_of.end()) {
          const std::pair<int, int> key{std::min(j, it->second), std::max(j, it->second)};
          auto [pos, inserted] = links.emplace(key, dist[v]);
          if (!inserted) pos->second = std::min(pos->second, dist[v]);
        } else {
          queue.push_back(v);
        }
      }
    }
  }
  std::vector<WeightedEdge> edges;
  for (const auto& [key, w] : links) edges.emplace_back(w, key.first, key.second);
  std::sort(edges.begin(), edges.end());
  DisjointSet sets(jn);
  std::vector<std::pair<int, int>> kept;
  for (const auto& [w, a, b] : edges) {
    if (sets.unite(a, b)) kept.emplace_back(a, b);
  }
  if (static_cast<int>(kept.size()) < jn - 1) {
    spdlog::warn("build_tree: joints disconnected along the skeleton; attaching by Euclidean distance");
    std::vector<WeightedEdge> all;
    for (int a = 0; a < jn; ++a) {
      for (int b = a + 1; b < jn; ++b) all.emplace_back((tree.joints.col(a) - tree.joints.col(b)).norm(), a, b);
    }
    std::sort(all.begin(), all.end());
    for (const auto& [w, a, b] : all) {
      if (sets.unite(a, b)) kept.emplace_back(a, b);
    }
  }

  tree.root = nearest_column(tree.joints, center_of_mass);
  tree.parent.assign(jn, -2);
  tree.parent[tree.root] = -1;
  const auto jadj = adjacency_of(jn, kept);
  std::vector<int> stack{tree.root};
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (auto it = jadj[u].rbegin(); it != jadj[u].rend(); ++it) {
      if (tree.parent[*it] == -2) {
        tree.parent[*it] = u;
        stack.push_back(*it);
      }
    }
  }
  return tree;
}

KinematicTree build_tree(const CurveSkeleton& skel, const JointDetection& detection, const Vec3& center_of_mass) {
  if (detection.single_bone) {
    const int s = nearest_column(skel.samples, center_of_mass);
    return KinematicTree::root_only(skel.samples.col(s), s);
  }
  return build_tree(skel, detection.joints, center_of_mass);
}

KinematicTree refine_with_frames(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                                 const KinematicTree& prior, int prior_frames, CurveSkeleton& skel, double tau,
                                 int canonical) {
  if (seq.frame_count() <= prior_frames) return prior;
  if (bones.count() != weights.bones() || bones.frames() != seq.frame_count()) {
    throw ShapeError("refine_with_frames: bones do not match weights and sequence");
  }
  skel.weights = pull_back_weights(skel, weights);
  const JointDetection det = detect_joints(skel, tau);
  const Vec3 com = seq.frame(canonical).rowwise().mean();
  const double snap = 2.0 * skel.mean_edge_length();

  std::vector<int> fresh = det.joints;
  if (det.single_bone) fresh.push_back(nearest_column(skel.samples, com));

  std::vector<int> kept;
  for (int j = 0; j < prior.size(); ++j) {
    const Vec3 p = prior.joints.col(j);
    bool near = false;
    for (int c : fresh) near = near || (skel.samples.col(c) - p).norm() <= snap;
    const int s = (j < static_cast<int>(prior.sample.size()) && prior.sample[j] >= 0 && prior.sample[j] < skel.size())
                      ? prior.sample[j]
                      : nearest_column(skel.samples, p);
    if (near || det.gradient[s] > tau) kept.push_back(s);
  }
  std::vector<int> all = kept;
  for (int c : fresh) {
    bool matched = false;
    for (int s : kept) matched = matched || (skel.samples.col(c) - skel.samples.col(s)).norm() <= snap;
    if (!matched) all.push_back(c);
  }
  return build_tree(skel, all, com);
}

}  // namespace skelebones
