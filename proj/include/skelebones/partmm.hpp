#pragma once

#include "skelebones/pose_solver.hpp"
#include "skelebones/rig_archive.hpp"
#include "skelebones/skeletonizer.hpp"
#include "skelebones/ssdr.hpp"

#include <vector>

namespace skelebones {

/// Overlapping kinematic parts. `joints[p]` includes the parent of the part's
/// top joint (the overlap); `bones[p]` is a partition of the bone indices.
struct PartDecomposition {
  std::vector<std::vector<int>> joints;
  std::vector<std::vector<int>> bones;
  /// Part owning each bone.
  std::vector<int> bone_part;

  int size() const { return static_cast<int>(joints.size()); }
  static PartDecomposition single(int joint_count, int bone_count);
};

/// Starts from the root and its child subtrees, splits the largest part at its
/// first branch (or halves a chain) and merges the smallest part into its
/// parent's part until `target_parts` remain. Bone b goes to the part whose
/// bones carry the largest sum_i W_ib * binding mass of vertex i on the part.
PartDecomposition decompose_parts(const KinematicTree& tree, const SkinningMatrix& weights,
                                  const SkeletonBinding& binding, int target_parts = 5);

/// Frame stride of pyramid level `level`: 2^(levels - level). Level `levels`
/// is the full-rate sequence.
int level_stride(int level, int levels);

/// One pyramid level: the source motion subsampled by `stride`.
struct DatabaseLevel {
  int stride = 1;
  /// Window length at this level (patch size clamped to the level length).
  int patch = 0;
  JointRotationTrack rotations;
  BoneTrack bones;
  /// FK joint transforms per level frame.
  std::vector<std::vector<RigidTransform>> globals;

  int length() const { return rotations.frames(); }
  int patch_count() const { return length() - patch + 1; }
};

/// Motion patches are the windows [start, start + patch) of every level.
struct MotionDatabase {
  KinematicTree tree;
  int patch_size = 7;
  /// levels[0] is the coarsest (stride 2^levels), levels.back() the full rate.
  std::vector<DatabaseLevel> levels;
  /// Mean bone length of the tree (scale of the alignment axis tips).
  double bone_scale = 1.0;

  const DatabaseLevel& finest() const { return levels.back(); }
};

/// Throws InsufficientFrames when the source is shorter than the patch size.
MotionDatabase build_database(const KinematicTree& tree, const JointRotationTrack& rotations, const BoneTrack& bones,
                              int patch_size = 7, int levels = 5);

struct PatchMatch {
  int start = 0;
  double distance = 0.0;
};

/// Exhaustive nearest-window search: distance = sum over window frames and
/// part joints of squared geodesic distance; the query window's length sets
/// the compared window length. Ascending distance, ties by lower start.
std::vector<PatchMatch> match_part(const DatabaseLevel& level, const std::vector<int>& part_joints,
                                   const JointRotationTrack& query, int k);

struct Alignment {
  Rotation3 rotation;
  Vec3 source_pivot = Vec3::Zero();
  Vec3 target_pivot = Vec3::Zero();
  /// False when the part was too small or degenerate and identity was used.
  bool fitted = false;

  RigidTransform apply(const RigidTransform& t) const {
    return {rotation * t.rotation, rotation * (t.translation - source_pivot) + target_pivot};
  }
};

/// Rotation about the part's top joint taking the matched pose's part joints
/// (positions plus joint-frame axis tips) onto the query pose's.
Alignment align_patch(const KinematicTree& tree, const std::vector<int>& part_joints,
                      const std::vector<RigidTransform>& query_globals,
                      const std::vector<RigidTransform>& match_globals, double axis_scale);

struct PartMMParams {
  int patch_size = 7;
  int k = 7;
  int levels = 5;
  double lambda_alpha = 0.7;
  int parts = 5;
  bool full_body = false;
};

/// Coarse-to-fine matched bone tracks for every query frame.
BoneTrack blend_pyramid(const MotionDatabase& db, const PartDecomposition& parts, const JointRotationTrack& query,
                        int bone_count, int k = 7, double lambda_alpha = 0.7);

/// blend_pyramid with a single part holding every joint and bone.
BoneTrack full_body_match(const MotionDatabase& db, const JointRotationTrack& query, int bone_count, int k = 7,
                          double lambda_alpha = 0.7);

/// Matched bone tracks of `query` under `rig`, skinned onto the rest vertices.
VertexSequence animate(const RigArchive& rig, const JointRotationTrack& query, const PartMMParams& params = {});
BoneTrack animate_bones(const RigArchive& rig, const JointRotationTrack& query, const PartMMParams& params = {});

}  // namespace skelebones
