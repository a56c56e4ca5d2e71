#pragma once

#include "skelebones/pose_solver.hpp"
#include "skelebones/skeletonizer.hpp"
#include "skelebones/ssdr.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace skelebones {

struct SyntheticParams {
  int frames = 100;
  int vertices = 2000;
  std::uint64_t seed = 0;
  double radius = 0.1;
  /// Peak joint angle in degrees.
  double theta_max_deg = 60.0;
  /// hinge_chain: number of unit segments along +x (segments - 1 hinges).
  int segments = 2;
  /// hinge_chain: hinges after the first stay straight before this frame (< 0: never held).
  int stage_split = -1;
  /// soft_chain: amplitude of the pose-dependent surface jiggle.
  double jiggle = 0.15;
  /// soft_chain: desynchronized arms sampled at half-frame times instead of the
  /// synchronized training motion.
  bool held_out = false;
};

/// A generated sequence and the articulated model that produced it.
struct SyntheticResult {
  VertexSequence sequence;
  /// Generating tree (canonical joint positions) and its per-frame poses.
  KinematicTree tree;
  JointRotationTrack poses;
  /// Rigid LBS model: one-hot vertex-to-bone weights (column j = bone ending
  /// at joint j) and the FK bone transforms. For soft_chain this omits the jiggle.
  SkinningMatrix weights;
  BoneTrack bones;
  /// Interior articulation points (hinges, branch hub).
  std::vector<Vec3> hinges;
  /// Joints that actually articulate.
  std::vector<int> moving_joints;
};

/// kind: rigid_body, hinge_chain, soft_chain, y_branch or humanoid_stick.
/// Throws UsageError for unknown kinds. Deterministic given the parameters.
SyntheticResult generate_synthetic(const std::string& kind, const SyntheticParams& params = {});

/// Generator kinds accepted by generate_synthetic.
const std::vector<std::string>& synthetic_kinds();

/// Tube of `count` jittered stratified surface samples around segment a -> b.
Points sample_tube(const Vec3& a, const Vec3& b, double radius, int count, std::uint64_t seed);

}  // namespace skelebones
