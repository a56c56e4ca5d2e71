#include "skelebones/ssdr.hpp"

#include "skelebones/errors.hpp"
#include "skelebones/spatial.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace skelebones {

std::string SkinningMatrix::check(double tol) const {
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    int nonzeros = 0;
    double sum = 0.0;
    for (Eigen::Index b = 0; b < values.cols(); ++b) {
      const double w = values(i, b);
      if (!std::isfinite(w) || w < 0.0 || w > 1.0 + tol) {
        return "weight (" + std::to_string(i) + ", " + std::to_string(b) + ") outside [0, 1]";
      }
      if (w != 0.0) ++nonzeros;
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol) return "weight row " + std::to_string(i) + " sums to " + std::to_string(sum);
    if (nonzeros > max_per_row) {
      return "weight row " + std::to_string(i) + " has " + std::to_string(nonzeros) + " non-zeros";
    }
  }
  return {};
}

SkinningMatrix SkinningMatrix::one_hot(const std::vector<int>& labels, int bones, int max_per_row) {
  SkinningMatrix w;
  w.max_per_row = max_per_row;
  w.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), bones);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= bones) throw IndexError("label out of range");
    w.values(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return w;
}

double reconstruction_sse(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                          int canonical) {
  if (weights.vertices() != seq.vertex_count() || weights.bones() != bones.count() ||
      bones.frames() != seq.frame_count()) {
    throw ShapeError("reconstruction: dimensions of sequence, weights and bones disagree");
  }
  const Points& rest = seq.frame(canonical);
  double sse = 0.0;
  for (int f = 0; f < seq.frame_count(); ++f) {
    const Points recon = lbs_apply(rest, weights.values, bones.frame(f));
    sse += (recon - seq.frame(f)).squaredNorm();
  }
  return sse;
}

double reconstruction_rmse(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                           int canonical) {
  const double sse = reconstruction_sse(seq, weights, bones, canonical);
  return std::sqrt(sse / (static_cast<double>(seq.frame_count()) * seq.vertex_count()));
}

namespace {

struct FrameRotations {
  // rot[f * B + b]
  std::vector<Mat3> rot;
  int bones = 0;

  void refresh(const BoneTrack& track) {
    bones = track.count();
    rot.resize(static_cast<size_t>(track.frames()) * bones);
    for (int f = 0; f < track.frames(); ++f) {
      for (int b = 0; b < bones; ++b) rot[static_cast<size_t>(f) * bones + b] = track.at(f, b).rotation.matrix();
    }
  }
  const Mat3& at(int f, int b) const { return rot[static_cast<size_t>(f) * bones + b]; }
};

// Minimizes w^T G w - 2 h^T w over the simplex by enumerating supports of
// the KKT system. Returns the objective without the constant term.
double simplex_qp(const Eigen::MatrixXd& g, const Eigen::VectorXd& h, Eigen::VectorXd& best) {
  const int k = static_cast<int>(h.size());
  double best_obj = std::numeric_limits<double>::infinity();
  best = Eigen::VectorXd::Zero(k);
  for (int mask = 1; mask < (1 << k); ++mask) {
    std::vector<int> support;
    for (int j = 0; j < k; ++j) {
      if (mask & (1 << j)) support.push_back(j);
    }
    const int s = static_cast<int>(support.size());
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
    if (s == 1) {
      w(support[0]) = 1.0;
    } else {
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
      Eigen::VectorXd rhs(s + 1);
      for (int a = 0; a < s; ++a) {
        for (int c = 0; c < s; ++c) kkt(a, c) = g(support[a], support[c]);
        kkt(a, s) = 1.0;
        kkt(s, a) = 1.0;
        rhs(a) = h(support[a]);
      }
      rhs(s) = 1.0;
      const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
      bool feasible = sol.allFinite();
      for (int a = 0; a < s && feasible; ++a) {
        if (sol(a) < -1e-12) feasible = false;
      }
      if (!feasible) continue;
      double total = 0.0;
      for (int a = 0; a < s; ++a) {
        w(support[a]) = std::max(0.0, sol(a));
        total += w(support[a]);
      }
      if (!(total > 0.0)) continue;
      w /= total;
    }
    const double obj = w.dot(g * w) - 2.0 * h.dot(w);
    if (obj < best_obj) {
      best_obj = obj;
      best = w;
    }
  }
  return best_obj;
}

class SsdrSolver {
 public:
  SsdrSolver(const VertexSequence& seq, const SsdrParams& params, SkinningMatrix weights, BoneTrack bones)
      : seq_(seq), params_(params), rest_(seq.frame(params.canonical)), w_(std::move(weights)),
        bones_(std::move(bones)) {
    select_frames_ = uniform_frames(seq.frame_count(), 64);
  }

  void update_weights() {
    rots_.refresh(bones_);
    const int n = seq_.vertex_count();
    const int nb = bones_.count();
    const int kcap = std::min(params_.weights_per_vertex, nb);
    const int frames = seq_.frame_count();
    std::vector<double> score(nb);
    std::vector<int> order(nb);
    std::vector<Vec3> cols;
    for (int i = 0; i < n; ++i) {
      const Vec3 x = rest_.col(i);
      for (int b = 0; b < nb; ++b) {
        double r = 0.0;
        for (int f : select_frames_) {
          r += (rots_.at(f, b) * x + bones_.at(f, b).translation - seq_.frame(f).col(i)).squaredNorm();
        }
        score[b] = r;
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return score[a] < score[c]; });
      std::vector<int> cand(order.begin(), order.begin() + kcap);

      // Current support, used to keep the previous row if it is better.
      std::vector<int> prev;
      for (int b = 0; b < nb; ++b) {
        if (w_.values(i, b) != 0.0) prev.push_back(b);
      }
      std::vector<int> all = cand;
      for (int b : prev) {
        if (std::find(all.begin(), all.end(), b) == all.end()) all.push_back(b);
      }
      const int m = static_cast<int>(all.size());
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
      Eigen::VectorXd h = Eigen::VectorXd::Zero(m);
      cols.resize(m);
      for (int f = 0; f < frames; ++f) {
        const Vec3 y = seq_.frame(f).col(i);
        for (int a = 0; a < m; ++a) cols[a] = rots_.at(f, all[a]) * x + bones_.at(f, all[a]).translation;
        for (int a = 0; a < m; ++a) {
          h(a) += cols[a].dot(y);
          for (int c = a; c < m; ++c) g(a, c) += cols[a].dot(cols[c]);
        }
      }
      for (int a = 0; a < m; ++a) {
        for (int c = 0; c < a; ++c) g(a, c) = g(c, a);
      }

      Eigen::VectorXd sol;
      const double obj = simplex_qp(g.topLeftCorner(kcap, kcap), h.head(kcap), sol);
      Eigen::VectorXd prev_w = Eigen::VectorXd::Zero(m);
      for (int a = 0; a < m; ++a) prev_w(a) = w_.values(i, all[a]);
      const double prev_obj = prev_w.dot(g * prev_w) - 2.0 * h.dot(prev_w);
      if (obj < prev_obj) {
        w_.values.row(i).setZero();
        for (int a = 0; a < kcap; ++a) w_.values(i, all[a]) = sol(a);
      }
    }
  }

  // Exact block-coordinate update of each bone: weighted Kabsch against the
  // residual left by every other bone.
  void update_bones() {
    const int n = seq_.vertex_count();
    const int nb = bones_.count();
    for (int f = 0; f < seq_.frame_count(); ++f) {
      if (f == params_.canonical) continue;
      const Points& y = seq_.frame(f);
      Points recon = lbs_apply(rest_, w_.values, bones_.frame(f));
      for (int b = 0; b < nb; ++b) {
        std::vector<int> idx;
        for (int i = 0; i < n; ++i) {
          if (w_.values(i, b) > 0.0) idx.push_back(i);
        }
        if (idx.size() < 3) continue;
        const RigidTransform old = bones_.at(f, b);
        Points src(3, idx.size());
        Points dst(3, idx.size());
        std::vector<double> mass(idx.size());
        for (size_t a = 0; a < idx.size(); ++a) {
          const int i = idx[a];
          const double wib = w_.values(i, b);
          const Vec3 x = rest_.col(i);
          const Vec3 others = recon.col(i) - wib * old.apply(x);
          src.col(a) = x;
          dst.col(a) = (y.col(i) - others) / wib;
          mass[a] = wib * wib;
        }
        RigidTransform next;
        try {
          next = fit_rigid(src, dst, mass);
        } catch (const DegenerateConfiguration&) {
          continue;
        }
        double old_cost = 0.0;
        double new_cost = 0.0;
        for (size_t a = 0; a < idx.size(); ++a) {
          old_cost += mass[a] * (old.apply(Vec3(src.col(a))) - dst.col(a)).squaredNorm();
          new_cost += mass[a] * (next.apply(Vec3(src.col(a))) - dst.col(a)).squaredNorm();
        }
        if (!(new_cost < old_cost)) continue;
        bones_.at(f, b) = next;
        for (size_t a = 0; a < idx.size(); ++a) {
          const int i = idx[a];
          const Vec3 x = rest_.col(i);
          recon.col(i) += w_.values(i, b) * (next.apply(x) - old.apply(x));
        }
      }
    }
  }

  // Removes bones without any weight; returns their indices in the current numbering.
  std::vector<int> drop_empty_bones() {
    std::vector<int> dropped;
    for (int b = bones_.count() - 1; b >= 0; --b) {
      if (w_.values.col(b).sum() > 0.0) continue;
      dropped.push_back(b);
      const Eigen::Index cols = w_.values.cols();
      Eigen::MatrixXd next(w_.values.rows(), cols - 1);
      next << w_.values.leftCols(b), w_.values.rightCols(cols - b - 1);
      w_.values = std::move(next);
      bones_.erase_column(b);
    }
    return dropped;
  }

  double sse() const { return reconstruction_sse(seq_, w_, bones_, params_.canonical); }
  SkinningMatrix& weights() { return w_; }
  BoneTrack& bones() { return bones_; }

 private:
  const VertexSequence& seq_;
  SsdrParams params_;
  Points rest_;
  SkinningMatrix w_;
  BoneTrack bones_;
  FrameRotations rots_;
  std::vector<int> select_frames_;
};

}  // namespace

SsdrResult ssdr_solve(const VertexSequence& seq, const ClusterAssignment& init, const SsdrParams& params) {
  if (static_cast<int>(init.labels.size()) != seq.vertex_count() || init.transforms.count() != init.cluster_count ||
      init.transforms.frames() != seq.frame_count()) {
    throw ShapeError("ssdr_solve: clustering does not match the sequence");
  }
  if (params.weights_per_vertex < 1) throw UsageError("ssdr_solve: weights_per_vertex must be >= 1");
  if (params.iters < 0) throw UsageError("ssdr_solve: iters must be >= 0");

  const double diag = seq.bbox_diagonal(params.canonical);
  const double samples = static_cast<double>(seq.frame_count()) * seq.vertex_count();
  SsdrSolver solver(seq, params,
                    SkinningMatrix::one_hot(init.labels, init.cluster_count, params.weights_per_vertex),
                    init.transforms);
  for (int b = 0; b < init.cluster_count; ++b) solver.bones().at(params.canonical, b) = RigidTransform::identity();

  SsdrResult result;
  std::vector<int> ids(init.cluster_count);
  std::iota(ids.begin(), ids.end(), 0);
  double sse = solver.sse();
  result.objective_history.push_back(sse);
  for (int it = 0; it < params.iters; ++it) {
    const double before = std::sqrt(sse / samples);
    solver.update_weights();
    for (int b : solver.drop_empty_bones()) {
      spdlog::info("ssdr: bone {} lost all weight and was dropped", ids[b]);
      result.dropped_bones.push_back(ids[b]);
      ids.erase(ids.begin() + b);
    }
    solver.update_bones();
    sse = solver.sse();
    result.objective_history.push_back(sse);
    result.iterations = it + 1;
    const double after = std::sqrt(sse / samples);
    spdlog::debug("ssdr: iteration {} rmse {:.6g}", it + 1, after);
    if (before - after < params.tol * diag) break;
  }

  result.weights = std::move(solver.weights());
  result.bones = std::move(solver.bones());
  result.rmse = std::sqrt(sse / samples);
  result.rmse_normalized = result.rmse / diag;
  return result;
}

RigidityEnergy rigidity_energy(const VertexSequence& seq, int knn, int canonical) {
  if (seq.frame_count() < 2) throw InsufficientFrames("rigidity_energy needs at least two frames");
  if (knn < 3) throw UsageError("rigidity_energy needs knn >= 3");
  const Points& rest = seq.frame(canonical);
  const KdTree tree(rest);
  const auto graph = tree.knn_graph(knn);

  RigidityEnergy e;
  e.frames = seq.frame_count();
  for (const auto& nbrs : graph) e.pairs += static_cast<long>(nbrs.size());

  for (int f = 0; f < seq.frame_count(); ++f) {
    const Points& cur = seq.frame(f);
    for (int i = 0; i < seq.vertex_count(); ++i) {
      const auto& nbrs = graph[i];
      Points src(3, nbrs.size());
      Points dst(3, nbrs.size());
      for (size_t a = 0; a < nbrs.size(); ++a) {
        src.col(a) = rest.col(nbrs[a]);
        dst.col(a) = cur.col(nbrs[a]);
      }
      bool have_rotation = true;
      Mat3 r = Mat3::Identity();
      try {
        r = kabsch_fit(src, dst).matrix();
      } catch (const DegenerateConfiguration&) {
        have_rotation = false;
        e.skipped_pairs += static_cast<long>(nbrs.size());
      }
      for (int j : nbrs) {
        const Vec3 dc = rest.col(i) - rest.col(j);
        const Vec3 df = cur.col(i) - cur.col(j);
        if (have_rotation) e.arap_sum += (df - r * dc).squaredNorm();
        const double dd = df.norm() - dc.norm();
        e.distance_sum += dd * dd;
      }
    }
  }
  const double denom = static_cast<double>(e.frames) * static_cast<double>(e.pairs);
  if (denom > 0.0) {
    e.arap_mean = e.arap_sum / denom;
    e.distance_mean = e.distance_sum / denom;
  }
  return e;
}

}  // namespace skelebones
