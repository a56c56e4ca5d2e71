#pragma once

#include "skelebones/motion_clustering.hpp"
#include "skelebones/partmm.hpp"
#include "skelebones/pose_solver.hpp"
#include "skelebones/rig_archive.hpp"
#include "skelebones/skeletonizer.hpp"
#include "skelebones/ssdr.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace skelebones {

struct PipelineConfig {
  ClusteringParams clustering;
  SsdrParams ssdr;
  SkeletonParams skeleton;
  double tau = 0.3;
  SolverParams ik;
  PartMMParams partmm;
  std::string units = "unitless";
  /// Skeleton file replacing curve-skeleton extraction when non-empty.
  std::filesystem::path import_skeleton;

  /// Throws UsageError naming the first out-of-range field.
  void validate() const;
  std::string to_json() const;
  /// Keys missing from `text` keep their defaults; unknown keys are rejected.
  static PipelineConfig from_json(const std::string& text);
  /// FNV-1a 64 of to_json().
  std::uint64_t hash() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RigResult {
  RigArchive rig;
  std::vector<StageTiming> timings;
  /// Empty on success, else "<stage>: <cause>" with rig.partial set.
  std::string error;

  bool ok() const { return error.empty(); }
};

/// clustering -> ssdr -> skeleton -> joints -> ik. A failing stage leaves the
/// earlier outputs in a partial archive.
RigResult build_rig(const VertexSequence& seq, const PipelineConfig& config);
/// build_rig that throws StageError instead of returning a partial rig.
RigArchive build_rig_or_throw(const VertexSequence& seq, const PipelineConfig& config);

/// Re-rigs an extended sequence whose first prior.frame_count() frames were
/// rigged into `prior`, keeping prior joints that the new weights confirm.
RigResult refine_rig(const RigArchive& prior, const VertexSequence& seq, const PipelineConfig& config);

}  // namespace skelebones
