#pragma once

#include "skelebones/se3.hpp"
#include "skelebones/sequence.hpp"
#include "skelebones/ssdr.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace skelebones {

struct ContractionParams {
  int knn = 16;
  /// Initial Laplacian (contraction) weight, multiplied by `growth` every iteration.
  double contraction_weight = 1.0;
  /// Attraction weight pulling points toward their previous positions.
  double attraction_weight = 0.5;
  double growth = 2.0;
  int max_iterations = 20;
  /// Stop once the median neighbourhood sqrt(lambda2 / lambda1) drops below this.
  double anisotropy_stop = 0.01;
  /// ContractionFailed when the bbox diagonal exceeds this multiple of the original.
  double divergence_ratio = 1.5;
};

/// Point-set Laplacian contraction over a fixed canonical KNN graph. The
/// iteration is linear in the input positions, so the schedule found on the
/// canonical frame can be replayed on any other frame.
class LaplacianContraction {
 public:
  LaplacianContraction(const Points& canonical, const ContractionParams& params = {});
  ~LaplacianContraction();
  LaplacianContraction(LaplacianContraction&&) noexcept;
  LaplacianContraction& operator=(LaplacianContraction&&) noexcept;

  const Points& contracted() const { return contracted_; }
  int iterations() const { return static_cast<int>(solvers_.size()); }
  const std::vector<std::vector<int>>& graph() const { return graph_; }

  /// Replays the canonical schedule on `frame`.
  Points contract(const Points& frame) const;
  /// Applies the transpose of the contraction operator to the columns of `rhs` (N x k).
  Eigen::MatrixXd contract_transpose(const Eigen::MatrixXd& rhs) const;

 private:
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;
  ContractionParams params_;
  std::vector<std::vector<int>> graph_;
  std::vector<std::unique_ptr<Solver>> solvers_;
  Points contracted_;
};

struct SkeletonParams {
  int samples = 100;
  ContractionParams contraction;
  /// Leaf branches with at most this many edges are pruned.
  int spur_edges = 2;
};

/// Polyline graph over M samples of the contracted canonical shape.
struct CurveSkeleton {
  Points samples;  // 3 x M
  std::vector<std::pair<int, int>> edges;
  /// Surface vertices corresponded to each sample.
  std::vector<std::vector<int>> correspondence;
  /// Per-vertex sample index (inverse of `correspondence`).
  std::vector<int> vertex_sample;
  /// M x B pulled-back skinning weights; empty until pull_back_weights.
  Eigen::MatrixXd weights;
  /// M x N linear map from frame positions to sample positions (rows of the
  /// contraction operator averaged per sample). Empty for imported skeletons.
  Eigen::MatrixXd frame_operator;

  int size() const { return static_cast<int>(samples.cols()); }
  std::vector<std::vector<int>> adjacency() const;
  double mean_edge_length() const;
  /// Empty string when the graph is connected with finite samples.
  std::string check() const;
};

/// Contract, downsample with farthest-point sampling, connect with an MST and
/// prune short spurs. Throws ContractionFailed on divergence.
CurveSkeleton extract_curve_skeleton(const Points& canonical, const SkeletonParams& params = {});

/// Builds a skeleton from externally supplied samples and edges; every
/// canonical vertex is corresponded to its nearest sample.
CurveSkeleton skeleton_from_samples(const Points& canonical, const Points& samples,
                                    const std::vector<std::pair<int, int>>& edges);

/// Sample positions in `frame` (the per-frame skeleton). Uses the contraction
/// operator when present, else a rigid fit of each sample's corresponded vertices.
Points frame_skeleton(const CurveSkeleton& skel, const Points& canonical, const Points& frame);

/// Mean of the weight rows of each sample's corresponded vertices, rows
/// renormalized. Samples without correspondences copy the nearest sample that has one.
Eigen::MatrixXd pull_back_weights(const CurveSkeleton& skel, const SkinningMatrix& weights);

struct JointDetection {
  /// Joint sample indices in ascending order.
  std::vector<int> joints;
  /// Per-sample scale-free weight gradient.
  std::vector<double> gradient;
  /// Joints that came from the gradient test (subset of `joints`).
  std::vector<int> gradient_joints;
  /// No gradient candidates and no branches: the shape moves as one bone.
  bool single_bone = false;
};

/// Per-sample gradient max_k 0.5 |w_j - w_k|_1 / |s_j - s_k| * mean edge length.
std::vector<double> weight_gradient(const CurveSkeleton& skel);

/// Branch samples, leaf samples, and the gradient peak of every connected run
/// of samples above `tau` that stays clear of the structural joints (more than
/// two edges away). Requires `skel.weights`.
JointDetection detect_joints(const CurveSkeleton& skel, double tau = 0.3);

struct KinematicTree {
  Points joints;  // 3 x J canonical positions
  /// Parent joint per joint; -1 for the root.
  std::vector<int> parent;
  int root = 0;
  /// Skeleton sample each joint sits on, or -1 when unknown.
  std::vector<int> sample;

  int size() const { return static_cast<int>(joints.cols()); }
  /// (parent, child) pairs ordered by child index.
  std::vector<std::pair<int, int>> edges() const;
  std::vector<std::vector<int>> children() const;
  /// Parents before children; children in ascending index order.
  std::vector<int> dfs_order() const;
  /// Empty string when there is exactly one root and the parent graph is a tree.
  std::string check() const;
  bool operator==(const KinematicTree& rhs) const;

  static KinematicTree root_only(const Vec3& position, int sample = -1);
};

/// Connects joints whose skeleton paths avoid other joints, keeps a minimum
/// spanning tree of those links and orients it by DFS from the joint nearest
/// `center_of_mass`.
KinematicTree build_tree(const CurveSkeleton& skel, const std::vector<int>& joint_samples, const Vec3& center_of_mass);

/// Tree for a detection result (root-only when `single_bone`).
KinematicTree build_tree(const CurveSkeleton& skel, const JointDetection& detection, const Vec3& center_of_mass);

/// Re-detects joints from weights solved on an extended sequence. Prior joints
/// are kept when a new candidate lies within 2 mean edge lengths or their
/// gradient is still above tau; unmatched new candidates are added. Returns
/// `prior` unchanged when the sequence has no frames beyond `prior_frames`.
KinematicTree refine_with_frames(const VertexSequence& seq, const SkinningMatrix& weights, const BoneTrack& bones,
                                 const KinematicTree& prior, int prior_frames, CurveSkeleton& skel, double tau = 0.3,
                                 int canonical = 0);

}  // namespace skelebones
