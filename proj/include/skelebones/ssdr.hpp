#pragma once

#include "skelebones/motion_clustering.hpp"
#include "skelebones/se3.hpp"
#include "skelebones/sequence.hpp"

#include <string>
#include <vector>

namespace skelebones {

/// Frames x bones rigid transforms; the canonical frame holds identities.
using BoneTrack = TransformTrack;

/// N x B non-negative skinning weights, rows on the simplex, at most
/// `max_per_row` non-zeros per row.
struct SkinningMatrix {
  Eigen::MatrixXd values;
  int max_per_row = 4;

  int vertices() const { return static_cast<int>(values.rows()); }
  int bones() const { return static_cast<int>(values.cols()); }
  double operator()(int i, int b) const { return values(i, b); }

  /// Empty string when every invariant holds, otherwise the first violation.
  std::string check(double tol = 1e-6) const;
  static SkinningMatrix one_hot(const std::vector<int>& labels, int bones, int max_per_row = 4);
};

struct SsdrParams {
  int iters = 20;
  int weights_per_vertex = 4;
  /// Early stop when an iteration improves RMSE by less than tol * bbox diagonal.
  double tol = 1e-7;
  int canonical = 0;
};

struct SsdrResult {
  SkinningMatrix weights;
  BoneTrack bones;
  /// Reconstruction RMSE in scene units and divided by the canonical bbox diagonal.
  double rmse = 0.0;
  double rmse_normalized = 0.0;
  /// Reconstruction SSE before the first iteration and after every iteration.
  std::vector<double> objective_history;
  /// Indices (in the initial numbering) of bones dropped for losing all weight.
  std::vector<int> dropped_bones;
  int iterations = 0;
};

/// Alternates per-vertex constrained weight solves and per-bone weighted
/// Kabsch transform solves, starting from a clustering.
SsdrResult ssdr_solve(const VertexSequence& seq, const ClusterAssignment& init, const SsdrParams& params = {});

/// sqrt(mean over frames and vertices of |LBS - observed|^2), scene units.
double reconstruction_rmse(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                           int canonical = 0);
double reconstruction_sse(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                          int canonical = 0);

struct RigidityEnergy {
  double arap_sum = 0.0;
  double distance_sum = 0.0;
  /// Sums divided by (frames * pairs).
  double arap_mean = 0.0;
  double distance_mean = 0.0;
  long pairs = 0;
  int frames = 0;
  /// Pair terms skipped because the owning vertex's neighbourhood rotation
  /// could not be fit.
  long skipped_pairs = 0;
};

/// ARAP and distance-preservation energies of a sequence over canonical
/// k-nearest-neighbour pairs, with per-vertex neighbourhood rotations from
/// Kabsch fits.
RigidityEnergy rigidity_energy(const VertexSequence& seq, int knn, int canonical = 0);

}  // namespace skelebones
