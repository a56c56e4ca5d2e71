#include "skelebones/motion_clustering.hpp"

#include "skelebones/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace skelebones {

std::vector<int> uniform_frames(int frame_count, int max_frames) {
  std::vector<int> out;
  if (frame_count <= 0) return out;
  if (max_frames <= 1 || frame_count <= max_frames) {
    const int n = max_frames <= 1 ? std::min(frame_count, 1) : frame_count;
    for (int f = 0; f < n; ++f) out.push_back(f);
    return out;
  }
  const double step = static_cast<double>(frame_count - 1) / (max_frames - 1);
  for (int k = 0; k < max_frames; ++k) out.push_back(static_cast<int>(std::lround(k * step)));
  return out;
}

Eigen::VectorXd motion_descriptor(const VertexSequence& seq, int vertex, int canonical, int max_frames) {
  if (vertex < 0 || vertex >= seq.vertex_count()) throw IndexError("motion_descriptor: vertex out of range");
  const auto frames = uniform_frames(seq.frame_count(), max_frames);
  const Vec3 rest = seq.frame(canonical).col(vertex);
  Eigen::VectorXd d(3 * frames.size());
  for (size_t k = 0; k < frames.size(); ++k) d.segment<3>(3 * k) = seq.frame(frames[k]).col(vertex) - rest;
  return d;
}

namespace {

std::vector<std::vector<int>> members_of(const std::vector<int>& labels, int cluster_count) {
  std::vector<std::vector<int>> members(cluster_count);
  for (size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
  return members;
}

Points gather(const Points& p, const std::vector<int>& idx) {
  Points out(3, static_cast<Eigen::Index>(idx.size()));
  for (size_t k = 0; k < idx.size(); ++k) out.col(k) = p.col(idx[k]);
  return out;
}

/// Relabels clusters 0..B'-1 in order of first appearance of their old id.
int compact_labels(std::vector<int>& labels, int cluster_count) {
  std::vector<int> remap(cluster_count, -1);
  std::vector<char> used(cluster_count, 0);
  for (int l : labels) used[l] = 1;
  int next = 0;
  for (int b = 0; b < cluster_count; ++b) {
    if (used[b]) remap[b] = next++;
  }
  for (int& l : labels) l = remap[l];
  return next;
}

/// Clustering state evaluated on the descriptor frames only.
class LbgState {
 public:
  LbgState(const VertexSequence& seq, const ClusteringParams& params)
      : seq_(&seq), params_(&params), frames_(uniform_frames(seq.frame_count(), params.descriptor_frames)) {}

  std::vector<int> labels;
  int clusters = 0;
  std::vector<double> sse;  // per cluster, over descriptor frames

  const std::vector<int>& frames() const { return frames_; }

  double total() const {
    double s = 0.0;
    for (double v : sse) s += v;
    return s;
  }

  /// Fits transforms; clusters that cannot be fit are dissolved into their
  /// members' best remaining clusters. Returns false if nothing is left.
  bool fit() {
    for (;;) {
      const auto members = members_of(labels, clusters);
      transforms_.assign(frames_.size() * clusters, RigidTransform{});
      int degenerate = -1;
      for (int b = 0; b < clusters && degenerate < 0; ++b) {
        try {
          fit_cluster(b, members[b]);
        } catch (const DegenerateConfiguration&) {
          degenerate = b;
        }
      }
      if (degenerate < 0) return true;
      spdlog::debug("lbg: cluster {} is degenerate, merging it into its neighbours", degenerate);
      if (clusters == 1) return false;
      dissolve(degenerate);
    }
  }

  /// cost(b, i): squared residual of vertex i under cluster b's transforms.
  Eigen::MatrixXd costs() const {
    const Points& rest = seq_->frame(params_->canonical);
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(clusters, rest.cols());
    for (int b = 0; b < clusters; ++b) {
      for (size_t k = 0; k < frames_.size(); ++k) {
        const RigidTransform& t = transform(k, b);
        Points pred = t.rotation.matrix() * rest;
        pred.colwise() += t.translation;
        cost.row(b) += (pred - seq_->frame(frames_[k])).colwise().squaredNorm();
      }
    }
    return cost;
  }

  void evaluate(const Eigen::MatrixXd& cost) {
    sse.assign(clusters, 0.0);
    for (size_t i = 0; i < labels.size(); ++i) sse[labels[i]] += cost(labels[i], i);
  }

  /// Lloyd iterations: assignment by rigid residual, then refit.
  bool refine() {
    if (!fit()) return false;
    for (int it = 0; it < params_->lloyd_iterations; ++it) {
      const Eigen::MatrixXd cost = costs();
      std::vector<int> next(labels.size());
      for (size_t i = 0; i < labels.size(); ++i) {
        Eigen::Index best;
        cost.col(i).minCoeff(&best);
        next[i] = static_cast<int>(best);
      }
      enforce_min_size(next, cost);
      const int next_clusters = compact_labels(next, clusters);
      const bool changed = next_clusters != clusters || next != labels;
      labels = std::move(next);
      clusters = next_clusters;
      if (!fit()) return false;
      if (!changed) break;
    }
    evaluate(costs());
    return true;
  }

  double rms(int b) const {
    const auto count = std::count(labels.begin(), labels.end(), b);
    return std::sqrt(sse[b] / (static_cast<double>(count) * frames_.size()));
  }

 private:
  const RigidTransform& transform(size_t k, int b) const { return transforms_[k * clusters + b]; }

  void fit_cluster(int b, const std::vector<int>& idx) {
    const Points src = gather(seq_->frame(params_->canonical), idx);
    for (size_t k = 0; k < frames_.size(); ++k) {
      if (frames_[k] == params_->canonical) continue;
      transforms_[k * clusters + b] = fit_rigid(src, gather(seq_->frame(frames_[k]), idx));
    }
  }

  void dissolve(int b) {
    const Eigen::MatrixXd cost = costs();
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != b) continue;
      int best = -1;
      for (int c = 0; c < clusters; ++c) {
        if (c != b && (best < 0 || cost(c, i) < cost(best, i))) best = c;
      }
      labels[i] = best;
    }
    clusters = compact_labels(labels, clusters);
  }

  void enforce_min_size(std::vector<int>& next, const Eigen::MatrixXd& cost) const {
    std::vector<char> alive(clusters, 1);
    for (;;) {
      std::vector<int> count(clusters, 0);
      for (int l : next) ++count[l];
      int live = 0;
      int smallest = -1;
      for (int b = 0; b < clusters; ++b) {
        if (!alive[b] || count[b] == 0) {
          alive[b] = 0;
          continue;
        }
        ++live;
        if (count[b] < params_->min_cluster_size && (smallest < 0 || count[b] < count[smallest])) smallest = b;
      }
      if (smallest < 0 || live <= 1) return;
      alive[smallest] = 0;
      for (size_t i = 0; i < next.size(); ++i) {
        if (next[i] != smallest) continue;
        int best = -1;
        for (int c = 0; c < clusters; ++c) {
          if (alive[c] && count[c] > 0 && (best < 0 || cost(c, i) < cost(best, i))) best = c;
        }
        next[i] = best;
      }
    }
  }

  const VertexSequence* seq_;
  const ClusteringParams* params_;
  std::vector<int> frames_;
  std::vector<RigidTransform> transforms_;
};

/// Two-means split of cluster `b` in descriptor space, seeded at the
/// centroid perturbed by +-eps along a random direction.
bool split_cluster(const VertexSequence& seq, const ClusteringParams& params, LbgState& state, int b,
                   std::mt19937_64& rng) {
  std::vector<int> idx;
  for (size_t i = 0; i < state.labels.size(); ++i) {
    if (state.labels[i] == b) idx.push_back(static_cast<int>(i));
  }
  const auto& frames = state.frames();
  const Points& rest = seq.frame(params.canonical);
  Eigen::MatrixXd desc(3 * frames.size(), idx.size());
  for (size_t m = 0; m < idx.size(); ++m) {
    for (size_t k = 0; k < frames.size(); ++k) {
      desc.col(m).segment<3>(3 * k) = seq.frame(frames[k]).col(idx[m]) - rest.col(idx[m]);
    }
  }
  const Eigen::VectorXd centroid = desc.rowwise().mean();
  const double spread = std::sqrt((desc.colwise() - centroid).colwise().squaredNorm().mean());
  if (!(spread > 0.0)) return false;

  std::normal_distribution<double> normal;
  Eigen::VectorXd dir(desc.rows());
  for (Eigen::Index r = 0; r < dir.size(); ++r) dir(r) = normal(rng);
  dir.normalize();
  Eigen::VectorXd c0 = centroid + 1e-3 * spread * dir;
  Eigen::VectorXd c1 = centroid - 1e-3 * spread * dir;

  std::vector<char> side(idx.size(), 0);
  for (int it = 0; it < 50; ++it) {
    bool changed = it == 0;
    Eigen::VectorXd s0 = Eigen::VectorXd::Zero(desc.rows());
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(desc.rows());
    int n0 = 0;
    int n1 = 0;
    for (size_t m = 0; m < idx.size(); ++m) {
      const char s = (desc.col(m) - c1).squaredNorm() < (desc.col(m) - c0).squaredNorm() ? 1 : 0;
      if (s != side[m]) changed = true;
      side[m] = s;
      if (s) {
        s1 += desc.col(m);
        ++n1;
      } else {
        s0 += desc.col(m);
        ++n0;
      }
    }
    if (n0 == 0 || n1 == 0) return false;
    c0 = s0 / n0;
    c1 = s1 / n1;
    if (!changed) break;
  }
  const auto n1 = std::count(side.begin(), side.end(), 1);
  const auto n0 = static_cast<long>(idx.size()) - n1;
  if (n0 < params.min_cluster_size || n1 < params.min_cluster_size) return false;
  for (size_t m = 0; m < idx.size(); ++m) {
    if (side[m]) state.labels[idx[m]] = state.clusters;
  }
  ++state.clusters;
  return true;
}

}  // namespace

TransformTrack fit_cluster_transforms(const VertexSequence& seq, const std::vector<int>& labels, int cluster_count,
                                      int canonical, const std::vector<int>& frames) {
  if (static_cast<int>(labels.size()) != seq.vertex_count()) throw ShapeError("fit_cluster_transforms: label count");
  for (int l : labels) {
    if (l < 0 || l >= cluster_count) throw ShapeError("fit_cluster_transforms: label out of range");
  }
  std::vector<int> which = frames;
  if (which.empty()) {
    for (int f = 0; f < seq.frame_count(); ++f) which.push_back(f);
  }
  const auto members = members_of(labels, cluster_count);
  TransformTrack track(seq.frame_count(), cluster_count);
  for (int b = 0; b < cluster_count; ++b) {
    const Points src = gather(seq.frame(canonical), members[b]);
    for (int f : which) {
      if (f == canonical) continue;
      try {
        track.at(f, b) = fit_rigid(src, gather(seq.frame(f), members[b]));
      } catch (const DegenerateConfiguration& e) {
        throw DegenerateCluster("cluster " + std::to_string(b) + ": " + e.what(), b);
      }
    }
  }
  return track;
}

ClusterAssignment lbg_cluster(const VertexSequence& seq, const ClusteringParams& params) {
  if (seq.frame_count() < 2) throw InsufficientFrames("lbg_cluster needs at least two frames");
  if (params.max_bones < 1) throw UsageError("max_bones must be >= 1");
  const double tol = params.distortion_tol * seq.bbox_diagonal(params.canonical);
  std::mt19937_64 rng(params.seed);

  LbgState state(seq, params);
  state.labels.assign(seq.vertex_count(), 0);
  state.clusters = 1;
  if (!state.refine()) throw ClusteringFailed("every cluster degenerated");

  ClusterAssignment result;
  result.split_history.push_back(state.total());

  std::set<int> unsplittable;
  int attempts = 0;
  while (state.clusters < params.max_bones && attempts++ < 4 * params.max_bones) {
    int target = -1;
    double worst = 0.0;
    double max_rms = 0.0;
    for (int b = 0; b < state.clusters; ++b) {
      const double r = state.rms(b);
      max_rms = std::max(max_rms, r);
      const auto count = std::count(state.labels.begin(), state.labels.end(), b);
      if (unsplittable.count(b) || count < 2 * params.min_cluster_size) continue;
      if (target < 0 || r > worst) {
        target = b;
        worst = r;
      }
    }
    if (max_rms < tol || target < 0 || worst < tol) break;

    LbgState candidate = state;
    if (!split_cluster(seq, params, candidate, target, rng) || !candidate.refine() ||
        candidate.total() > state.total() * (1.0 + 1e-12)) {
      unsplittable.insert(target);
      continue;
    }
    state = std::move(candidate);
    unsplittable.clear();
    result.split_history.push_back(state.total());
    spdlog::debug("lbg: {} clusters, total residual {:.6g}", state.clusters, state.total());
  }

  result.labels = state.labels;
  result.cluster_count = state.clusters;
  result.transforms = fit_cluster_transforms(seq, result.labels, result.cluster_count, params.canonical);
  result.residuals.assign(result.cluster_count, 0.0);
  std::vector<int> counts(result.cluster_count, 0);
  const Points& rest = seq.frame(params.canonical);
  for (int f = 0; f < seq.frame_count(); ++f) {
    for (int i = 0; i < seq.vertex_count(); ++i) {
      const int b = result.labels[i];
      result.residuals[b] += (result.transforms.at(f, b).apply(Vec3(rest.col(i))) - seq.frame(f).col(i)).squaredNorm();
    }
  }
  for (int l : result.labels) ++counts[l];
  for (int b = 0; b < result.cluster_count; ++b) {
    result.residuals[b] = std::sqrt(result.residuals[b] / (static_cast<double>(counts[b]) * seq.frame_count()));
  }
  return result;
}

}  // namespace skelebones
