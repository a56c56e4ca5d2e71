#pragma once

#include "skelebones/pose_solver.hpp"
#include "skelebones/skeletonizer.hpp"
#include "skelebones/ssdr.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

namespace skelebones {

/// Everything a rig run produces: free-form bones with skinning weights and
/// the kinematic skeleton with per-frame joint rotations.
struct RigArchive {
  std::string units = "unitless";
  int canonical = 0;
  /// Pipeline configuration as JSON, and its FNV-1a hash.
  std::string config;
  std::uint64_t config_hash = 0;
  /// Set when a pipeline stage failed; later sections may be empty.
  bool partial = false;
  std::string failed_stage;

  Points rest;  // canonical vertex positions, 3 x N
  SkinningMatrix weights;
  BoneTrack bones;
  CurveSkeleton skeleton;
  KinematicTree tree;
  JointRotationTrack poses;

  int frame_count() const { return bones.frames(); }
  int vertex_count() const { return static_cast<int>(rest.cols()); }
  int bone_count() const { return bones.count(); }
  int joint_count() const { return tree.size(); }

  /// Empty string when every invariant holds, else the first failed check.
  std::string check() const;
  /// Compares every serialized field.
  bool operator==(const RigArchive& rhs) const;
};

/// Text archive with META, REST, WEIGHTS, BONES, SKELETON, TREE and POSES
/// sections (layout in docs/formats.md). Doubles are written in shortest
/// round-trip form, so save/load is lossless.
void save_rig(const RigArchive& rig, const std::filesystem::path& path);
/// Throws CorruptArchive naming the failed check.
RigArchive load_rig(const std::filesystem::path& path);

/// Query motion files hold only a POSES section.
void save_poses(const JointRotationTrack& poses, const std::filesystem::path& path);
JointRotationTrack load_poses(const std::filesystem::path& path);

/// Skeleton files hold only a SKELETON section (used by --import-skeleton).
void save_skeleton(const CurveSkeleton& skel, const std::filesystem::path& path);
void load_skeleton(const std::filesystem::path& path, Points& samples, std::vector<std::pair<int, int>>& edges);

/// ASCII PLY of frame `frame`: surface points colored by their dominant bone,
/// skeleton samples and joints (distinguished by a `kind` property), and
/// edge elements for the skeleton polyline and the tree bones. Throws IndexError.
void export_viewable(const RigArchive& rig, int frame, const std::filesystem::path& path);

/// Deterministic color for bone `b`.
std::array<std::uint8_t, 3> bone_color(int b);

}  // namespace skelebones
