#include "skelebones/pose_solver.hpp"
#include "skelebones/synthetic.hpp"

#include <doctest.h>

#include <numbers>
#include <random>

using namespace skelebones;

namespace {

constexpr double kPi = std::numbers::pi;

KinematicTree chain(int joints) {
  KinematicTree t;
  t.joints.resize(3, joints);
  for (int j = 0; j < joints; ++j) {
    t.joints.col(j) = Vec3(j, 0, 0);
    t.parent.push_back(j - 1);
    t.sample.push_back(-1);
  }
  return t;
}

double brute_chamfer(const Points& a, const Points& b) {
  auto one_way = [](const Points& p, const Points& q) {
    double sum = 0.0;
    for (int i = 0; i < p.cols(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < q.cols(); ++j) best = std::min(best, (p.col(i) - q.col(j)).squaredNorm());
      sum += best;
    }
    return sum / p.cols();
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

}  // namespace

TEST_CASE("forward kinematics by hand") {
  const KinematicTree t = chain(3);
  Pose pose = Pose::identity(3);
  pose.rotations[1] = Rotation3::from_axis_angle(Vec3::UnitZ(), kPi / 2);
  pose.rotations[2] = Rotation3::from_axis_angle(Vec3::UnitZ(), kPi / 2);
  pose.root_translation = Vec3(0, 0, 1);
  const Points p = joint_positions(t, pose);
  CHECK((p.col(0) - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((p.col(1) - Vec3(0, 1, 1)).norm() < 1e-12);
  CHECK((p.col(2) - Vec3(-1, 1, 1)).norm() < 1e-12);

  const auto bones = bone_transforms(t, pose);
  // the bone ending at joint 1 carries (0.5, 0, 0) around the root
  CHECK((bones[1].apply(Vec3(0.5, 0, 0)) - Vec3(0, 0.5, 1)).norm() < 1e-12);
  CHECK((bones[2].apply(Vec3(1.5, 0, 0)) - Vec3(-0.5, 1, 1)).norm() < 1e-12);
}

TEST_CASE("root rotation turns the whole chain") {
  const KinematicTree t = chain(2);
  Pose pose = Pose::identity(2);
  pose.rotations[0] = Rotation3::from_axis_angle(Vec3::UnitZ(), kPi / 2);
  CHECK((joint_positions(t, pose).col(1) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("identity pose skins to the rest shape") {
  const KinematicTree t = chain(4);
  const Points rest = sample_tube(Vec3::Zero(), Vec3(3, 0, 0), 0.1, 300, 1);
  const SkeletonBinding b = bind_vertices(rest, t);
  CHECK((skin_with_skeleton(rest, b, t, Pose::identity(4)) - rest).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("binding rows are convex with at most four bones") {
  const auto syn = generate_synthetic("humanoid_stick");
  const SkeletonBinding b = bind_vertices(syn.sequence.frame(0), syn.tree);
  for (int i = 0; i < b.weights.rows(); ++i) {
    CHECK(b.weights.row(i).sum() == doctest::Approx(1.0));
    CHECK(b.weights.row(i).minCoeff() >= 0.0);
    CHECK((b.weights.row(i).array() > 0.0).count() <= 4);
    CHECK(b.weights(i, syn.tree.root) == 0.0);
  }
  const KinematicTree single = KinematicTree::root_only(Vec3::Zero(), 0);
  const SkeletonBinding all = bind_vertices(syn.sequence.frame(0), single);
  CHECK(all.weights.col(0).minCoeff() == 1.0);
}

TEST_CASE("chamfer distance matches brute force") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points a(3, 40);
  Points b(3, 55);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
  for (int i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
  CHECK(chamfer_distance(a, b) == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-12));
  CHECK(chamfer_distance(a, a) == 0.0);
  CHECK_THROWS_AS(chamfer_distance(a, Points(3, 0)), EmptyPointSet);
}

TEST_CASE("solve_pose recovers a bent chain") {
  const KinematicTree t = chain(3);
  const Points rest = sample_tube(Vec3::Zero(), Vec3(2, 0, 0), 0.1, 300, 2);
  const SkeletonBinding b = bind_vertices(rest, t);
  Pose truth = Pose::identity(3);
  truth.rotations[1] = Rotation3::from_axis_angle(Vec3(0, 0.3, 1).normalized(), 0.5);
  truth.rotations[2] = Rotation3::from_axis_angle(Vec3(1, 1, 0).normalized(), -0.4);
  truth.root_translation = Vec3(0.1, -0.2, 0.05);
  const PoseSolution sol = solve_pose(t, b, rest, skin_with_skeleton(rest, b, t, truth), joint_positions(t, truth),
                                      Pose::identity(3));
  CHECK(geodesic_distance(sol.pose.rotations[1], truth.rotations[1]) < 1e-6);
  CHECK(geodesic_distance(sol.pose.rotations[2], truth.rotations[2]) < 1e-6);
  CHECK((sol.pose.root_translation - truth.root_translation).norm() < 1e-6);
  CHECK(sol.pose.rotations[0] == Rotation3::identity());
  for (size_t i = 1; i < sol.loss_history.size(); ++i) CHECK(sol.loss_history[i] <= sol.loss_history[i - 1]);
}

TEST_CASE("a non-finite target raises SolverDiverged") {
  const KinematicTree t = chain(2);
  const Points rest = sample_tube(Vec3::Zero(), Vec3(1, 0, 0), 0.1, 50, 3);
  const SkeletonBinding b = bind_vertices(rest, t);
  Points target = rest;
  target(0, 0) = std::nan("");
  try {
    solve_pose(t, b, rest, target, t.joints, Pose::identity(2));
    FAIL("expected SolverDiverged");
  } catch (const SolverDiverged& e) {
    CHECK(e.last_finite().size() == 2);
  }
}

TEST_CASE("joint rotation track slicing") {
  JointRotationTrack track(5, 2);
  Pose p = Pose::identity(2);
  p.rotations[1] = Rotation3::from_axis_angle(Vec3::UnitX(), 0.2);
  p.root_translation = Vec3(1, 2, 3);
  track.set_pose(3, p);
  const JointRotationTrack s = track.slice(2, 5);
  CHECK(s.frames() == 3);
  CHECK(s.pose(1).rotations[1] == p.rotations[1]);
  CHECK(s.translation(1) == p.root_translation);
  CHECK_THROWS_AS(track.pose(5), IndexError);
  CHECK_THROWS_AS(track.set_pose(0, Pose::identity(3)), ShapeError);
}
