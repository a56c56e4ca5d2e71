#pragma once

#include "skelebones/errors.hpp"
#include "skelebones/se3.hpp"
#include "skelebones/sequence.hpp"
#include "skelebones/skeletonizer.hpp"

#include <vector>

namespace skelebones {

/// Local joint rotations of one frame plus the global root translation.
struct Pose {
  std::vector<Rotation3> rotations;
  Vec3 root_translation = Vec3::Zero();

  static Pose identity(int joints) { return {std::vector<Rotation3>(joints), Vec3::Zero()}; }
  int size() const { return static_cast<int>(rotations.size()); }
};

/// F x J local rotations and F root translations.
class JointRotationTrack {
 public:
  JointRotationTrack() = default;
  JointRotationTrack(int frames, int joints)
      : frames_(frames), joints_(joints), rotations_(static_cast<size_t>(frames) * joints),
        translations_(frames, Vec3::Zero()) {}

  int frames() const { return frames_; }
  int joints() const { return joints_; }
  Rotation3& at(int f, int j) { return rotations_[static_cast<size_t>(f) * joints_ + j]; }
  const Rotation3& at(int f, int j) const { return rotations_[static_cast<size_t>(f) * joints_ + j]; }
  Vec3& translation(int f) { return translations_[f]; }
  const Vec3& translation(int f) const { return translations_[f]; }

  Pose pose(int f) const;
  void set_pose(int f, const Pose& pose);
  /// Frames [begin, end) as a new track.
  JointRotationTrack slice(int begin, int end) const;
  bool operator==(const JointRotationTrack& rhs) const;

 private:
  int frames_ = 0;
  int joints_ = 0;
  std::vector<Rotation3> rotations_;
  std::vector<Vec3> translations_;
};

/// Joint j's local rotation orients the bone from its parent to j:
///   Rg_j = Rg_parent * R_j,  p_j = p_parent + Rg_j (c_j - c_parent),
/// and the root sits at c_root + root_translation with orientation R_root.
/// Returned transforms hold (Rg_j, p_j).
std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, const Pose& pose);
Points joint_positions(const KinematicTree& tree, const Pose& pose);

/// Per-joint skinning transforms: joint j != root carries the bone ending at
/// j, x -> p_parent + Rg_j (x - c_parent); the root carries
/// x -> p_root + R_root (x - c_root).
std::vector<RigidTransform> bone_transforms(const KinematicTree& tree, const Pose& pose);

/// N x J rigid binding of vertices to tree bones (column j = bone ending at
/// joint j; the root column is used only by root-only trees).
struct SkeletonBinding {
  Eigen::MatrixXd weights;
};

/// Inverse squared point-to-segment distance to the 4 nearest bones,
/// normalized per vertex. Root-only trees bind everything to the root.
SkeletonBinding bind_vertices(const Points& canonical, const KinematicTree& tree);

Points skin_with_skeleton(const Points& canonical, const SkeletonBinding& binding, const KinematicTree& tree,
                          const Pose& pose);

/// 0.5 * (mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2). Throws EmptyPointSet.
double chamfer_distance(const Points& a, const Points& b);

struct SolverParams {
  double lambda = 1.0;
  int iters = 200;
  /// Central-difference step in radians.
  double diff_step = 1e-4;
  /// Initial trust radius (radians per joint), halved on failure, doubled on success.
  double step = 0.05;
  /// Vertices entering the L2 term (uniform stride subset; 0 = all).
  int max_vertices = 512;
};

struct PoseSolution {
  Pose pose;
  double loss = 0.0;
  /// Objective after initialization and after every accepted step.
  std::vector<double> loss_history;
  int iterations = 0;
};

/// Raised when the objective stops being finite; carries the last finite iterate.
class SolverDiverged : public Error {
 public:
  SolverDiverged(const std::string& what, Pose last) : Error(what), last_(std::move(last)) {}
  const Pose& last_finite() const { return last_; }

 private:
  Pose last_;
};

/// Minimizes chamfer(FK joints, target samples) + lambda * mean |skinned - target|^2
/// over local joint rotations (root rotation fixed at identity when the root
/// has children, since it duplicates the children's freedom). Root translation
/// is re-solved in closed form every iteration. Starts from `init`.
PoseSolution solve_pose(const KinematicTree& tree, const SkeletonBinding& binding, const Points& canonical,
                        const Points& target, const Points& target_samples, const Pose& init,
                        const SolverParams& params = {});

struct SequenceSolution {
  JointRotationTrack track;
  std::vector<double> losses;
};

/// Solves every frame of `seq` against the rest positions `rest`, in order,
/// warm-starting from the previous frame. Frame `pinned` (none when negative)
/// is set to the identity pose instead of solved.
SequenceSolution solve_sequence(const KinematicTree& tree, const SkeletonBinding& binding, const CurveSkeleton& skel,
                                const Points& rest, const VertexSequence& seq, const SolverParams& params = {},
                                int pinned = 0);

}  // namespace skelebones
