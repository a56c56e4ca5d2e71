#pragma once

#include "skelebones/se3.hpp"
#include "skelebones/sequence.hpp"

#include <cstdint>
#include <vector>

namespace skelebones {

struct ClusteringParams {
  int max_bones = 50;
  /// Stop splitting once every cluster's RMS rigid-fit residual is below
  /// distortion_tol * canonical bbox diagonal.
  double distortion_tol = 0.005;
  int min_cluster_size = 10;
  std::uint64_t seed = 0;
  /// Frames used by descriptors and by the split/refine loop.
  int descriptor_frames = 32;
  int lloyd_iterations = 10;
  int canonical = 0;
};

struct ClusterAssignment {
  std::vector<int> labels;
  int cluster_count = 0;
  /// frames x cluster_count, fit over every frame.
  TransformTrack transforms;
  /// Per-cluster RMS reconstruction error over every frame (scene units).
  std::vector<double> residuals;
  /// Total squared residual over the descriptor frames after each accepted
  /// split (index 0 is the single-cluster state).
  std::vector<double> split_history;
};

/// Uniformly spaced frame indices, first and last included, at most
/// `max_frames` of them (all frames when frame_count <= max_frames).
std::vector<int> uniform_frames(int frame_count, int max_frames);

/// Concatenated displacement x_f - x_canonical over uniform_frames(F, max_frames).
Eigen::VectorXd motion_descriptor(const VertexSequence& seq, int vertex, int canonical = 0, int max_frames = 32);

/// Linde-Buzo-Gray split-and-refine clustering against per-cluster rigid
/// transforms. Throws ClusteringFailed if every cluster degenerates.
ClusterAssignment lbg_cluster(const VertexSequence& seq, const ClusteringParams& params = {});

/// Per-frame Kabsch fits from canonical cluster points to frame points,
/// restricted to `frames` (every frame when empty; other frames are left at
/// identity). The canonical frame is pinned to identity. Throws
/// DegenerateCluster when a cluster is smaller than three points or collinear.
TransformTrack fit_cluster_transforms(const VertexSequence& seq, const std::vector<int>& labels, int cluster_count,
                                      int canonical = 0, const std::vector<int>& frames = {});

}  // namespace skelebones
