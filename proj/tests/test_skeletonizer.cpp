#include "skelebones/skeletonizer.hpp"
#include "skelebones/synthetic.hpp"

#include <doctest.h>

#include <random>

using namespace skelebones;

namespace {

Points tube(int n = 600) { return sample_tube(Vec3::Zero(), Vec3(2, 0, 0), 0.1, n, 4); }

// Straight chain of m samples along x with a path graph.
CurveSkeleton chain_skeleton(const Points& canonical, int m) {
  Points s(3, m);
  std::vector<std::pair<int, int>> edges;
  for (int j = 0; j < m; ++j) {
    s.col(j) = Vec3(2.0 * j / (m - 1), 0, 0);
    if (j > 0) edges.emplace_back(j - 1, j);
  }
  return skeleton_from_samples(canonical, s, edges);
}

double cross_section_radius(const Points& p) {
  return p.bottomRows(2).colwise().norm().maxCoeff();
}

}  // namespace

TEST_CASE("contraction collapses a tube onto its axis") {
  const Points rest = tube();
  const LaplacianContraction c(rest);
  CHECK(c.iterations() >= 1);
  CHECK(cross_section_radius(c.contracted()) < 0.2 * cross_section_radius(rest));
  CHECK((c.contract(rest) - c.contracted()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("contraction is rigid-motion equivariant") {
  const Points rest = tube(400);
  const LaplacianContraction c(rest);
  const Mat3 r = Rotation3::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.7).matrix();
  const Vec3 t(0.5, -1, 2);
  const Points moved = (r * rest).colwise() + t;
  const Points expected = (r * c.contracted()).colwise() + t;
  CHECK((c.contract(moved) - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("contract_transpose is the adjoint of contract") {
  const Points rest = tube(300);
  const LaplacianContraction c(rest);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Points x(3, rest.cols());
  Eigen::MatrixXd y(rest.cols(), 1);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (int i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
  const double lhs = c.contract(x).row(1).dot(y.col(0).transpose());
  const double rhs = x.row(1).dot(c.contract_transpose(y).col(0).transpose());
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
}

TEST_CASE("extracted skeleton invariants") {
  const Points rest = generate_synthetic("y_branch").sequence.frame(0);
  const CurveSkeleton skel = extract_curve_skeleton(rest);
  CHECK(skel.check().empty());
  CHECK(skel.size() <= 100);
  CHECK(static_cast<int>(skel.edges.size()) == skel.size() - 1);
  std::vector<int> seen(rest.cols(), 0);
  for (int s = 0; s < skel.size(); ++s) {
    for (int i : skel.correspondence[s]) {
      ++seen[i];
      CHECK(skel.vertex_sample[i] == s);
    }
  }
  for (int v : seen) CHECK(v == 1);
  REQUIRE(skel.frame_operator.rows() == skel.size());
  for (int s = 0; s < skel.size(); ++s) CHECK(skel.frame_operator.row(s).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frame skeleton follows a rigid motion on both paths") {
  const Points rest = tube(400);
  const Mat3 r = Rotation3::from_axis_angle(Vec3::UnitZ(), 0.4).matrix();
  const Points moved = (r * rest).colwise() + Vec3(1, 2, 3);
  const CurveSkeleton extracted = extract_curve_skeleton(rest);
  const CurveSkeleton imported = chain_skeleton(rest, 11);
  for (const CurveSkeleton* skel : {&extracted, &imported}) {
    const Points expected = (r * frame_skeleton(*skel, rest, rest)).colwise() + Vec3(1, 2, 3);
    CHECK((frame_skeleton(*skel, rest, moved) - expected).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("weight gradient of a sharp step") {
  const Points rest = tube(400);
  CurveSkeleton skel = chain_skeleton(rest, 11);
  skel.weights = Eigen::MatrixXd::Zero(11, 2);
  for (int j = 0; j < 11; ++j) skel.weights(j, j < 5 ? 0 : 1) = 1.0;
  const auto g = weight_gradient(skel);
  // Samples 4 and 5 straddle the step: 0.5 * |w4 - w5|_1 / spacing * mean spacing = 1.
  CHECK(g[4] == doctest::Approx(1.0));
  CHECK(g[5] == doctest::Approx(1.0));
  CHECK(g[0] == 0.0);
  CHECK(g[10] == 0.0);

  const JointDetection det = detect_joints(skel, 0.3);
  CHECK(det.joints == std::vector<int>{0, 4, 10});
  CHECK(det.gradient_joints == std::vector<int>{4});
  CHECK_FALSE(det.single_bone);
}

TEST_CASE("uniform weights mean a single bone") {
  const Points rest = tube(200);
  CurveSkeleton skel = chain_skeleton(rest, 6);
  skel.weights = Eigen::MatrixXd::Ones(6, 1);
  const JointDetection det = detect_joints(skel);
  CHECK(det.single_bone);
  const KinematicTree t = build_tree(skel, det, rest.rowwise().mean());
  CHECK(t.size() == 1);
  CHECK(t.parent[0] == -1);
  CHECK_THROWS_AS(detect_joints(skel, 0.0), UsageError);
  CHECK_THROWS_AS(detect_joints(skel, 1.5), UsageError);
}

TEST_CASE("build_tree roots at the joint nearest the centre of mass") {
  const Points rest = tube(200);
  const CurveSkeleton skel = chain_skeleton(rest, 11);
  const KinematicTree t = build_tree(skel, std::vector<int>{0, 4, 10}, Vec3(0.8, 0, 0));
  REQUIRE(t.size() == 3);
  CHECK(t.check().empty());
  CHECK(t.sample[t.root] == 4);
  CHECK(t.dfs_order().size() == 3);
  CHECK(t.dfs_order().front() == t.root);
  for (const auto& [p, c] : t.edges()) CHECK(t.parent[c] == p);
}

TEST_CASE("refinement without new frames returns the prior tree") {
  SyntheticParams sp;
  sp.frames = 20;
  sp.vertices = 400;
  const auto syn = generate_synthetic("hinge_chain", sp);
  CurveSkeleton skel = extract_curve_skeleton(syn.sequence.frame(0));
  const KinematicTree prior = KinematicTree::root_only(Vec3(1, 0, 0), 0);
  CHECK(refine_with_frames(syn.sequence, syn.weights, syn.bones, prior, 20, skel) == prior);
}
