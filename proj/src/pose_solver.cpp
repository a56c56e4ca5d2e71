#include "skelebones/pose_solver.hpp"

#include "skelebones/spatial.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace skelebones {

Pose JointRotationTrack::pose(int f) const {
  if (f < 0 || f >= frames_) throw IndexError("pose frame out of range");
  Pose p;
  p.rotations.assign(rotations_.begin() + static_cast<std::ptrdiff_t>(f) * joints_,
                     rotations_.begin() + static_cast<std::ptrdiff_t>(f + 1) * joints_);
  p.root_translation = translations_[f];
  return p;
}

void JointRotationTrack::set_pose(int f, const Pose& pose) {
  if (f < 0 || f >= frames_) throw IndexError("pose frame out of range");
  if (pose.size() != joints_) throw ShapeError("pose joint count differs from track");
  std::copy(pose.rotations.begin(), pose.rotations.end(), rotations_.begin() + static_cast<std::ptrdiff_t>(f) * joints_);
  translations_[f] = pose.root_translation;
}

JointRotationTrack JointRotationTrack::slice(int begin, int end) const {
  if (begin < 0 || end > frames_ || begin >= end) throw IndexError("invalid pose slice");
  JointRotationTrack out(end - begin, joints_);
  for (int f = begin; f < end; ++f) out.set_pose(f - begin, pose(f));
  return out;
}

bool JointRotationTrack::operator==(const JointRotationTrack& rhs) const {
  if (frames_ != rhs.frames_ || joints_ != rhs.joints_) return false;
  for (size_t i = 0; i < rotations_.size(); ++i) {
    if (!(rotations_[i] == rhs.rotations_[i])) return false;
  }
  return translations_ == rhs.translations_;
}

std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, const Pose& pose) {
  if (pose.size() != tree.size()) throw ShapeError("pose joint count differs from tree");
  std::vector<RigidTransform> global(tree.size());
  for (int j : tree.dfs_order()) {
    const int p = tree.parent[j];
    if (p < 0) {
      global[j] = {pose.rotations[j], tree.joints.col(j) + pose.root_translation};
    } else {
      const Rotation3 rg = global[p].rotation * pose.rotations[j];
      global[j] = {rg, global[p].translation + rg * Vec3(tree.joints.col(j) - tree.joints.col(p))};
    }
  }
  return global;
}

Points joint_positions(const KinematicTree& tree, const Pose& pose) {
  const auto global = forward_kinematics(tree, pose);
  Points out(3, tree.size());
  for (int j = 0; j < tree.size(); ++j) out.col(j) = global[j].translation;
  return out;
}

std::vector<RigidTransform> bone_transforms(const KinematicTree& tree, const Pose& pose) {
  const auto global = forward_kinematics(tree, pose);
  std::vector<RigidTransform> out(tree.size());
  for (int j = 0; j < tree.size(); ++j) {
    const int p = tree.parent[j] < 0 ? j : tree.parent[j];
    const Rotation3& r = global[j].rotation;
    out[j] = {r, global[p].translation - r * Vec3(tree.joints.col(p))};
  }
  return out;
}

namespace {

double segment_distance2(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (x - (a + t * ab)).squaredNorm();
}

}  // namespace

SkeletonBinding bind_vertices(const Points& canonical, const KinematicTree& tree) {
  const Eigen::Index n = canonical.cols();
  const int jn = tree.size();
  SkeletonBinding binding;
  binding.weights = Eigen::MatrixXd::Zero(n, jn);
  const auto edges = tree.edges();
  if (edges.empty()) {
    binding.weights.col(tree.root).setOnes();
    return binding;
  }
  const double diag = (canonical.rowwise().maxCoeff() - canonical.rowwise().minCoeff()).norm();
  const double eps = 1e-12 * diag * diag;
  std::vector<std::pair<double, int>> dist(edges.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 x = canonical.col(i);
    for (size_t e = 0; e < edges.size(); ++e) {
      const auto [p, c] = edges[e];
      dist[e] = {segment_distance2(x, tree.joints.col(p), tree.joints.col(c)), c};
    }
    const size_t k = std::min<size_t>(4, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double total = 0.0;
    for (size_t a = 0; a < k; ++a) total += 1.0 / (dist[a].first + eps);
    for (size_t a = 0; a < k; ++a) binding.weights(i, dist[a].second) = 1.0 / (dist[a].first + eps) / total;
  }
  return binding;
}

Points skin_with_skeleton(const Points& canonical, const SkeletonBinding& binding, const KinematicTree& tree,
                          const Pose& pose) {
  return lbs_apply(canonical, binding.weights, bone_transforms(tree, pose));
}

double chamfer_distance(const Points& a, const Points& b) {
  if (a.cols() == 0 || b.cols() == 0) throw EmptyPointSet("chamfer_distance of an empty point set");
  auto directed = [](const Points& from, const Points& to) {
    const KdTree tree(to);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < from.cols(); ++i) {
      double d2 = 0.0;
      tree.nearest(from.col(i), &d2);
      sum += d2;
    }
    return sum / static_cast<double>(from.cols());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

namespace {

class PoseProblem {
 public:
  PoseProblem(const KinematicTree& tree, const SkeletonBinding& binding, const Points& canonical,
              const Points& target, const Points& samples, const SolverParams& params)
      : tree_(tree), samples_(samples), sample_tree_(samples), lambda_(params.lambda) {
    const Eigen::Index n = canonical.cols();
    const Eigen::Index stride =
        params.max_vertices > 0 ? std::max<Eigen::Index>(1, (n + params.max_vertices - 1) / params.max_vertices) : 1;
    for (Eigen::Index i = 0; i < n; i += stride) subset_.push_back(static_cast<int>(i));
    const int m = static_cast<int>(subset_.size());
    rest_.resize(3, m);
    target_.resize(3, m);
    bound_.resize(m);
    for (int a = 0; a < m; ++a) {
      rest_.col(a) = canonical.col(subset_[a]);
      target_.col(a) = target.col(subset_[a]);
      for (int j = 0; j < tree.size(); ++j) {
        const double w = binding.weights(subset_[a], j);
        if (w != 0.0) bound_[a].emplace_back(j, w);
      }
    }
    if (lambda_ == 0.0) {
      rest_.resize(3, 0);
      target_.resize(3, 0);
      bound_.clear();
    }
    joint_nn_.resize(tree.size());
    sample_nn_.resize(samples.cols());
  }

  int residual_size() const {
    return 3 * (tree_.size() + static_cast<int>(samples_.cols()) + static_cast<int>(rest_.cols()));
  }

  void assign(const Pose& pose) {
    const Points jp = joint_positions(tree_, pose);
    for (int j = 0; j < tree_.size(); ++j) joint_nn_[j] = sample_tree_.nearest(jp.col(j));
    for (Eigen::Index s = 0; s < samples_.cols(); ++s) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < tree_.size(); ++j) {
        const double d = (jp.col(j) - samples_.col(s)).squaredNorm();
        if (d < best) {
          best = d;
          sample_nn_[s] = j;
        }
      }
    }
  }

  // Unscaled model-minus-target offsets and their squared scales, under the
  // current nearest-neighbour assignment.
  void offsets(const Pose& pose, Eigen::Matrix3Xd& off, Eigen::VectorXd& scale2) const {
    const int jn = tree_.size();
    const int ms = static_cast<int>(samples_.cols());
    const int nv = static_cast<int>(rest_.cols());
    off.resize(3, jn + ms + nv);
    scale2.resize(jn + ms + nv);
    const Points jp = joint_positions(tree_, pose);
    for (int j = 0; j < jn; ++j) {
      off.col(j) = jp.col(j) - samples_.col(joint_nn_[j]);
      scale2(j) = 0.5 / jn;
    }
    for (int s = 0; s < ms; ++s) {
      off.col(jn + s) = jp.col(sample_nn_[s]) - samples_.col(s);
      scale2(jn + s) = 0.5 / ms;
    }
    if (nv > 0) {
      const auto bt = bone_transforms(tree_, pose);
      for (int a = 0; a < nv; ++a) {
        Vec3 x = Vec3::Zero();
        for (const auto& [j, w] : bound_[a]) x += w * bt[j].apply(Vec3(rest_.col(a)));
        off.col(jn + ms + a) = x - target_.col(a);
        scale2(jn + ms + a) = lambda_ / nv;
      }
    }
  }

  Eigen::VectorXd residual(const Pose& pose) const {
    Eigen::Matrix3Xd off;
    Eigen::VectorXd scale2;
    offsets(pose, off, scale2);
    for (Eigen::Index k = 0; k < off.cols(); ++k) off.col(k) *= std::sqrt(scale2(k));
    return Eigen::Map<const Eigen::VectorXd>(off.data(), off.size());
  }

  double loss(const Pose& pose) {
    assign(pose);
    return residual(pose).squaredNorm();
  }

  // Closed-form root translation under the current assignment.
  Vec3 translation_update(const Pose& pose) const {
    Eigen::Matrix3Xd off;
    Eigen::VectorXd scale2;
    offsets(pose, off, scale2);
    return pose.root_translation - (off * scale2) / scale2.sum();
  }

 private:
  const KinematicTree& tree_;
  const Points& samples_;
  KdTree sample_tree_;
  double lambda_;
  std::vector<int> subset_;
  Points rest_;
  Points target_;
  std::vector<std::vector<std::pair<int, double>>> bound_;
  std::vector<int> joint_nn_;
  std::vector<int> sample_nn_;
};

Pose perturbed(const Pose& pose, const std::vector<int>& free, const Eigen::VectorXd& delta) {
  Pose out = pose;
  for (size_t k = 0; k < free.size(); ++k) {
    const Vec3 d = delta.segment<3>(static_cast<Eigen::Index>(3 * k));
    out.rotations[free[k]] = Rotation3::from_rotation_vector(d) * pose.rotations[free[k]];
  }
  return out;
}

}  // namespace

PoseSolution solve_pose(const KinematicTree& tree, const SkeletonBinding& binding, const Points& canonical,
                        const Points& target, const Points& target_samples, const Pose& init,
                        const SolverParams& params) {
  if (target_samples.cols() == 0) throw EmptyPointSet("solve_pose: no target skeleton samples");
  if (init.size() != tree.size()) throw ShapeError("solve_pose: initial pose joint count differs from tree");
  if (target.cols() != canonical.cols() || binding.weights.rows() != canonical.cols() ||
      binding.weights.cols() != tree.size()) {
    throw ShapeError("solve_pose: canonical, target and binding disagree");
  }
  if (params.lambda < 0.0) throw UsageError("solve_pose: lambda must be >= 0");

  const bool gauge = !tree.children()[tree.root].empty();
  std::vector<int> free;
  for (int j = 0; j < tree.size(); ++j) {
    if (!(gauge && j == tree.root)) free.push_back(j);
  }
  const int np = 3 * static_cast<int>(free.size());

  PoseProblem problem(tree, binding, canonical, target, target_samples, params);
  PoseSolution sol;
  sol.pose = init;
  if (gauge) sol.pose.rotations[tree.root] = Rotation3::identity();
  sol.loss = problem.loss(sol.pose);
  if (!std::isfinite(sol.loss)) throw SolverDiverged("solve_pose: initial loss is not finite", init);
  sol.loss_history.push_back(sol.loss);

  double radius = params.step;
  const double h = params.diff_step;
  for (int it = 0; it < params.iters; ++it) {
    sol.iterations = it + 1;
    const double start = sol.loss;

    Pose trial = sol.pose;
    problem.assign(sol.pose);
    trial.root_translation = problem.translation_update(sol.pose);
    const double lt = problem.loss(trial);
    if (std::isfinite(lt) && lt <= sol.loss) {
      const bool improved = lt < sol.loss;
      sol.pose = trial;
      sol.loss = lt;
      if (improved) sol.loss_history.push_back(lt);
    }

    bool accepted = false;
    problem.assign(sol.pose);
    const Eigen::VectorXd r0 = problem.residual(sol.pose);
    Eigen::MatrixXd jac(r0.size(), np);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(np);
    for (int c = 0; c < np; ++c) {
      e(c) = h;
      const Eigen::VectorXd plus = problem.residual(perturbed(sol.pose, free, e));
      e(c) = -h;
      const Eigen::VectorXd minus = problem.residual(perturbed(sol.pose, free, e));
      e(c) = 0.0;
      jac.col(c) = (plus - minus) / (2.0 * h);
    }
    const Eigen::MatrixXd hess = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * r0;
    if (np > 0 && grad.norm() > 0.0) {
      const double damping = 1e-9 * std::max(hess.diagonal().maxCoeff(), 1e-30);
      Eigen::VectorXd delta =
          -(hess + damping * Eigen::MatrixXd::Identity(np, np)).ldlt().solve(grad);
      if (!delta.allFinite()) delta = -grad;
      while (radius > 1e-12) {
        double largest = 0.0;
        for (int k = 0; k < np / 3; ++k) largest = std::max(largest, delta.segment<3>(3 * k).norm());
        const Eigen::VectorXd step = largest > radius ? Eigen::VectorXd(delta * (radius / largest)) : delta;
        const Pose candidate = perturbed(sol.pose, free, step);
        const double lc = problem.loss(candidate);
        if (std::isnan(lc)) throw SolverDiverged("solve_pose: objective became NaN", sol.pose);
        if (lc < sol.loss) {
          sol.pose = candidate;
          sol.loss = lc;
          sol.loss_history.push_back(lc);
          radius = std::min(2.0 * radius, 1.0);
          accepted = true;
          break;
        }
        radius *= 0.5;
      }
    }
    if (!accepted && !(sol.loss < start)) break;
    if (start - sol.loss <= 1e-12 * start + 1e-20) break;
  }
  return sol;
}

SequenceSolution solve_sequence(const KinematicTree& tree, const SkeletonBinding& binding, const CurveSkeleton& skel,
                                const Points& rest, const VertexSequence& seq, const SolverParams& params,
                                int pinned) {
  if (rest.cols() != seq.vertex_count()) throw ShapeError("solve_sequence: rest and sequence vertex counts differ");
  SequenceSolution out;
  out.track = JointRotationTrack(seq.frame_count(), tree.size());
  out.losses.assign(seq.frame_count(), 0.0);
  Pose warm = Pose::identity(tree.size());
  for (int f = 0; f < seq.frame_count(); ++f) {
    if (f == pinned) {
      warm = Pose::identity(tree.size());
      out.track.set_pose(f, warm);
      continue;
    }
    const Points samples = frame_skeleton(skel, rest, seq.frame(f));
    const PoseSolution sol = solve_pose(tree, binding, rest, seq.frame(f), samples, warm, params);
    out.track.set_pose(f, sol.pose);
    out.losses[f] = sol.loss;
    warm = sol.pose;
  }
  return out;
}

}  // namespace skelebones
