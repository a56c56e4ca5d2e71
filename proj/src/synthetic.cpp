#include "skelebones/synthetic.hpp"

#include "skelebones/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

namespace skelebones {

namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

// Unit vectors spanning the plane orthogonal to `axis`.
std::pair<Vec3, Vec3> orthonormal_basis(const Vec3& axis) {
  const Vec3 ref = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitY();
  const Vec3 e1 = axis.cross(ref).normalized();
  return {e1, axis.cross(e1).normalized()};
}

struct Body {
  KinematicTree tree;
  Points rest;
  std::vector<int> bone;  // per vertex: joint whose bone carries it
};

KinematicTree make_tree(const std::vector<Vec3>& joints, const std::vector<int>& parent) {
  KinematicTree t;
  t.joints.resize(3, static_cast<Eigen::Index>(joints.size()));
  for (size_t j = 0; j < joints.size(); ++j) t.joints.col(static_cast<Eigen::Index>(j)) = joints[j];
  t.parent = parent;
  t.sample.assign(joints.size(), -1);
  for (size_t j = 0; j < parent.size(); ++j) {
    if (parent[j] < 0) t.root = static_cast<int>(j);
  }
  return t;
}

SyntheticResult finish(const Body& body, const JointRotationTrack& poses, const SyntheticParams& params,
                       const std::function<Vec3(int f, int i, const Vec3& posed)>& extra = {}) {
  SyntheticResult out;
  const int n = static_cast<int>(body.rest.cols());
  const int jn = body.tree.size();
  out.tree = body.tree;
  out.poses = poses;
  std::vector<int> labels = body.bone;
  out.weights = SkinningMatrix::one_hot(labels, jn);
  out.bones = BoneTrack(poses.frames(), jn);
  std::vector<Points> frames;
  for (int f = 0; f < poses.frames(); ++f) {
    const auto bt = bone_transforms(body.tree, poses.pose(f));
    Points p(3, n);
    for (int i = 0; i < n; ++i) {
      const Vec3 posed = bt[body.bone[i]].apply(Vec3(body.rest.col(i)));
      p.col(i) = extra ? extra(f, i, posed) : posed;
    }
    for (int j = 0; j < jn; ++j) out.bones.at(f, j) = bt[j];
    frames.push_back(std::move(p));
  }
  (void)params;
  out.sequence = VertexSequence(std::move(frames));
  return out;
}

// Splits `total` samples over segments in proportion to their lengths.
std::vector<int> split_counts(const std::vector<double>& lengths, int total) {
  double sum = 0.0;
  for (double l : lengths) sum += l;
  std::vector<int> counts;
  int used = 0;
  for (size_t k = 0; k < lengths.size(); ++k) {
    const int c = k + 1 == lengths.size() ? total - used : static_cast<int>(std::lround(total * lengths[k] / sum));
    counts.push_back(c);
    used += c;
  }
  return counts;
}

Body tube_body(const KinematicTree& tree, const std::vector<std::pair<int, int>>& segments, double radius, int total,
               std::uint64_t seed) {
  std::vector<double> lengths;
  for (const auto& [a, c] : segments) lengths.push_back((tree.joints.col(c) - tree.joints.col(a)).norm());
  const auto counts = split_counts(lengths, total);
  Body body;
  body.tree = tree;
  body.rest.resize(3, total);
  int at = 0;
  for (size_t k = 0; k < segments.size(); ++k) {
    const auto [a, c] = segments[k];
    const Points pts = sample_tube(tree.joints.col(a), tree.joints.col(c), radius, counts[k], seed + 7919 * k);
    body.rest.middleCols(at, counts[k]) = pts;
    for (int i = 0; i < counts[k]; ++i) body.bone.push_back(c);
    at += counts[k];
  }
  return body;
}

SyntheticResult rigid_body(const SyntheticParams& p) {
  Body body;
  body.tree = make_tree({Vec3::Zero()}, {-1});
  body.rest = sample_tube(Vec3(-1, 0, 0), Vec3(1, 0, 0), p.radius, p.vertices, p.seed);
  body.bone.assign(p.vertices, 0);
  JointRotationTrack poses(p.frames, 1);
  const Vec3 axis = Vec3(1, 1, 0.5).normalized();
  for (int f = 0; f < p.frames; ++f) {
    const double s = std::sin(2.0 * kPi * f / std::max(p.frames, 1));
    poses.at(f, 0) = Rotation3::from_axis_angle(axis, deg(p.theta_max_deg) * s);
    poses.translation(f) = Vec3(0.5 * s, 0.3 * f / std::max(p.frames, 1), 0.0);
  }
  SyntheticResult out = finish(body, poses, p);
  out.moving_joints = {0};
  return out;
}

SyntheticResult hinge_chain(const SyntheticParams& p) {
  if (p.segments < 1) throw UsageError("hinge_chain needs at least one segment");
  std::vector<Vec3> joints;
  std::vector<int> parent;
  for (int j = 0; j <= p.segments; ++j) {
    joints.emplace_back(j, 0.0, 0.0);
    parent.push_back(j - 1);
  }
  Body body;
  body.tree = make_tree(joints, parent);
  body.rest = sample_tube(Vec3::Zero(), Vec3(p.segments, 0, 0), p.radius, p.vertices, p.seed);
  for (int i = 0; i < p.vertices; ++i) {
    const int s = std::clamp(static_cast<int>(std::floor(body.rest(0, i))), 0, p.segments - 1);
    body.bone.push_back(s + 1);
  }
  JointRotationTrack poses(p.frames, p.segments + 1);
  const double span = std::max(p.frames, 1);
  for (int f = 0; f < p.frames; ++f) {
    for (int h = 1; h < p.segments; ++h) {
      const double omega = 1.0 + 0.5 * (h - 1);
      double theta = 0.0;
      if (h == 1 || p.stage_split < 0) {
        theta = std::sin(2.0 * kPi * omega * f / span);
      } else if (f >= p.stage_split) {
        theta = std::sin(2.0 * kPi * omega * (f - p.stage_split) / std::max(span - p.stage_split, 1.0));
      }
      poses.at(f, h + 1) = Rotation3::from_axis_angle(Vec3::UnitZ(), deg(p.theta_max_deg) * theta);
    }
  }
  SyntheticResult out = finish(body, poses, p);
  for (int h = 1; h < p.segments; ++h) {
    out.hinges.emplace_back(h, 0.0, 0.0);
    out.moving_joints.push_back(h + 1);
  }
  return out;
}

double soft_angle(double t) { return std::sin(2.0 * kPi * t / 120.0 + 0.3 * std::sin(2.0 * kPi * t / 370.0)); }

SyntheticResult soft_chain(const SyntheticParams& p) {
  // 0 torso centre, 1/2 left shoulder/hand, 3/4 right shoulder/hand
  Body body;
  body.tree = make_tree({Vec3(0, 0, 0), Vec3(-0.5, 0, 0), Vec3(-1.5, 0, 0), Vec3(0.5, 0, 0), Vec3(1.5, 0, 0)},
                        {-1, 0, 1, 0, 3});
  body.rest = sample_tube(Vec3(-1.5, 0, 0), Vec3(1.5, 0, 0), p.radius, p.vertices, p.seed);
  for (int i = 0; i < p.vertices; ++i) {
    const double x = body.rest(0, i);
    body.bone.push_back(x < -0.5 ? 2 : x < 0.0 ? 1 : x < 0.5 ? 3 : 4);
  }
  JointRotationTrack poses(p.frames, 5);
  const double amp = deg(p.theta_max_deg);
  std::vector<double> left(p.frames);
  std::vector<double> right(p.frames);
  for (int f = 0; f < p.frames; ++f) {
    left[f] = amp * (p.held_out ? soft_angle(f + 0.5) : soft_angle(f));
    right[f] = amp * (p.held_out ? soft_angle(f + 37.5) : soft_angle(f));
    poses.at(f, 2) = Rotation3::from_axis_angle(Vec3::UnitZ(), left[f]);
    poses.at(f, 4) = Rotation3::from_axis_angle(Vec3::UnitZ(), right[f]);
  }
  const auto jiggle = [&](int f, int i, const Vec3& posed) -> Vec3 {
    const int b = body.bone[i];
    if (b != 2 && b != 4) return posed;
    const double theta = b == 2 ? left[f] : right[f];
    const double u = std::clamp(std::abs(body.rest(0, i)) - 0.5, 0.0, 1.0);
    const double d = p.jiggle * (std::sin(kPi * u) * std::sin(2.0 * theta) +
                                 0.5 * std::sin(2.0 * kPi * u) * (std::cos(3.0 * theta) - 1.0));
    const Vec3 normal = Rotation3::from_axis_angle(Vec3::UnitZ(), theta) * Vec3::UnitY();
    return posed + d * normal;
  };
  SyntheticResult out = finish(body, poses, p, jiggle);
  out.hinges = {Vec3(-0.5, 0, 0), Vec3(0.5, 0, 0)};
  out.moving_joints = {2, 4};
  return out;
}

SyntheticResult y_branch(const SyntheticParams& p) {
  std::vector<Vec3> joints{Vec3::Zero()};
  for (int k = 0; k < 3; ++k) {
    const double a = deg(90.0 + 120.0 * k);
    joints.emplace_back(std::cos(a), std::sin(a), 0.0);
  }
  const KinematicTree tree = make_tree(joints, {-1, 0, 0, 0});
  const Body body = tube_body(tree, {{0, 1}, {0, 2}, {0, 3}}, p.radius, p.vertices, p.seed);
  JointRotationTrack poses(p.frames, 4);
  const double span = std::max(p.frames, 1);
  for (int f = 0; f < p.frames; ++f) {
    for (int k = 1; k < 3; ++k) {
      const Vec3 dir = joints[k + 1];
      const Vec3 axis = Vec3::UnitZ().cross(dir).normalized();
      const double theta = deg(p.theta_max_deg) * std::sin(2.0 * kPi * (1.0 + 0.3 * k) * f / span);
      poses.at(f, k + 1) = Rotation3::from_axis_angle(axis, theta);
    }
  }
  SyntheticResult out = finish(body, poses, p);
  out.hinges = {Vec3::Zero()};
  out.moving_joints = {2, 3};
  return out;
}

SyntheticResult humanoid_stick(const SyntheticParams& p) {
  const std::vector<Vec3> joints{
      {0, 0, 0},         {0, 0.5, 0},      {0, 1.0, 0},      {0, 1.4, 0},       // pelvis, spine, chest, head
      {-0.25, 1.0, 0},   {-0.75, 1.0, 0},  {-1.25, 1.0, 0},                     // left arm
      {0.25, 1.0, 0},    {0.75, 1.0, 0},   {1.25, 1.0, 0},                      // right arm
      {-0.15, 0, 0},     {-0.15, -0.55, 0}, {-0.15, -1.1, 0},                   // left leg
      {0.15, 0, 0},      {0.15, -0.55, 0},  {0.15, -1.1, 0}};                   // right leg
  const std::vector<int> parent{-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14};
  const KinematicTree tree = make_tree(joints, parent);
  std::vector<std::pair<int, int>> segments;
  for (int j = 0; j < tree.size(); ++j) {
    if (parent[j] >= 0) segments.emplace_back(parent[j], j);
  }
  const Body body = tube_body(tree, segments, 0.5 * p.radius, p.vertices, p.seed);
  JointRotationTrack poses(p.frames, tree.size());
  const double amp = deg(p.theta_max_deg);
  const double span = std::max(p.frames, 1);
  for (int f = 0; f < p.frames; ++f) {
    const double s = std::sin(2.0 * kPi * f / span);
    const double c = std::sin(2.0 * kPi * 1.7 * f / span);
    poses.at(f, 5) = Rotation3::from_axis_angle(Vec3::UnitZ(), -0.8 * amp * s);
    poses.at(f, 6) = Rotation3::from_axis_angle(Vec3::UnitZ(), -0.5 * amp * c);
    poses.at(f, 8) = Rotation3::from_axis_angle(Vec3::UnitZ(), 0.8 * amp * c);
    poses.at(f, 9) = Rotation3::from_axis_angle(Vec3::UnitZ(), 0.5 * amp * s);
    poses.at(f, 11) = Rotation3::from_axis_angle(Vec3::UnitX(), 0.6 * amp * s);
    poses.at(f, 12) = Rotation3::from_axis_angle(Vec3::UnitX(), -0.4 * amp * std::abs(s));
    poses.at(f, 14) = Rotation3::from_axis_angle(Vec3::UnitX(), -0.6 * amp * s);
    poses.at(f, 15) = Rotation3::from_axis_angle(Vec3::UnitX(), -0.4 * amp * std::abs(c));
    poses.at(f, 3) = Rotation3::from_axis_angle(Vec3::UnitY(), 0.3 * amp * c);
  }
  SyntheticResult out = finish(body, poses, p);
  out.hinges = {joints[2], joints[4], joints[5], joints[7], joints[8], joints[10], joints[11], joints[13], joints[14]};
  out.moving_joints = {3, 5, 6, 8, 9, 11, 12, 14, 15};
  return out;
}

}  // namespace

Points sample_tube(const Vec3& a, const Vec3& b, double radius, int count, std::uint64_t seed) {
  if (count < 1) throw UsageError("tube needs at least one sample");
  const Vec3 axis = b - a;
  const double length = axis.norm();
  if (!(length > 0.0) || !(radius > 0.0)) throw UsageError("tube needs positive length and radius");
  const auto [e1, e2] = orthonormal_basis(axis / length);
  const int rings_around = std::max(6, static_cast<int>(std::lround(std::sqrt(count * 2.0 * kPi * radius / length))));
  const int rings_along = (count + rings_around - 1) / rings_around;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  Points out(3, count);
  for (int k = 0; k < count; ++k) {
    const int iu = k / rings_around;
    const int ip = k % rings_around;
    const double u = (iu + jitter(rng)) / rings_along;
    const double phi = 2.0 * kPi * (ip + jitter(rng)) / rings_around;
    out.col(k) = a + u * axis + radius * (std::cos(phi) * e1 + std::sin(phi) * e2);
  }
  return out;
}

const std::vector<std::string>& synthetic_kinds() {
  static const std::vector<std::string> kinds{"rigid_body", "hinge_chain", "soft_chain", "y_branch", "humanoid_stick"};
  return kinds;
}

SyntheticResult generate_synthetic(const std::string& kind, const SyntheticParams& params) {
  if (params.frames < 1 || params.vertices < 8) throw UsageError("synthetic sequences need frames >= 1 and vertices >= 8");
  if (kind == "rigid_body") return rigid_body(params);
  if (kind == "hinge_chain") return hinge_chain(params);
  if (kind == "soft_chain") return soft_chain(params);
  if (kind == "y_branch") return y_branch(params);
  if (kind == "humanoid_stick") return humanoid_stick(params);
  throw UsageError("unknown synthetic kind '" + kind + "'");
}

}  // namespace skelebones
