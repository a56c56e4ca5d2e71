// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include "skelebones/metrics.hpp"
#include "skelebones/partmm.hpp"
#include "skelebones/pipeline.hpp"
#include "skelebones/synthetic.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <unistd.h>

using namespace skelebones;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

Rotation3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Rotation3(n(rng), n(rng), n(rng), n(rng));
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

std::vector<int> interior_joints(const KinematicTree& tree) {
  std::vector<int> degree(tree.size(), 0);
  for (const auto& [p, c] : tree.edges()) {
    ++degree[p];
    ++degree[c];
  }
  std::vector<int> out;
  for (int j = 0; j < tree.size(); ++j) {
    if (degree[j] >= 2) out.push_back(j);
  }
  return out;
}

// Parent pointers reach the single root from every joint without revisiting.
bool is_tree(const KinematicTree& tree) {
  const int n = tree.size();
  int roots = 0;
  for (int j = 0; j < n; ++j) roots += tree.parent[j] < 0;
  if (roots != 1 || static_cast<int>(tree.edges().size()) != n - 1) return false;
  for (int j = 0; j < n; ++j) {
    int cur = j;
    int steps = 0;
    while (tree.parent[cur] >= 0 && steps <= n) {
      cur = tree.parent[cur];
      ++steps;
    }
    if (steps > n || cur != tree.root) return false;
  }
  return true;
}

struct TreeStages {
  CurveSkeleton skeleton;
  KinematicTree tree;
};

// clustering -> ssdr -> skeleton -> joints, without pose solving.
TreeStages tree_stages(const VertexSequence& seq, const PipelineConfig& cfg = {}) {
  const ClusterAssignment clusters = lbg_cluster(seq, cfg.clustering);
  const SsdrResult fit = ssdr_solve(seq, clusters, cfg.ssdr);
  TreeStages out;
  out.skeleton = extract_curve_skeleton(seq.frame(0), cfg.skeleton);
  out.skeleton.weights = pull_back_weights(out.skeleton, fit.weights);
  const JointDetection det = detect_joints(out.skeleton, cfg.tau);
  out.tree = build_tree(out.skeleton, det, seq.frame(0).rowwise().mean());
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome kernel_exactness() {
  const Clock clock;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Rotation3 truth = random_rotation(rng);
    Points src(3, 12);
    for (int i = 0; i < src.cols(); ++i) src.col(i) = Vec3(u(rng), u(rng), u(rng));
    const Vec3 t(u(rng), u(rng), u(rng));
    const Points dst = (truth.matrix() * src).colwise() + t;
    worst = std::max(worst, geodesic_distance(kabsch_fit(src, dst), truth));
  }
  int violations = 0;
  double slack = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Rotation3 a = random_rotation(rng);
    const Rotation3 b = random_rotation(rng);
    const Rotation3 c = random_rotation(rng);
    const double lhs = geodesic_distance(a, c);
    const double rhs = geodesic_distance(a, b) + geodesic_distance(b, c);
    if (lhs > rhs + 1e-12) ++violations;
    slack = std::max(slack, lhs - rhs);
  }
  const double secs = clock.seconds();
  return {worst < 1e-9 && violations == 0 && secs < 5.0,
          fmt::format("max kabsch error {:.3g} rad, {} triangle violations (max excess {:.3g}), {:.2f} s", worst,
                      violations, slack, secs)};
}

Outcome ssdr_fidelity() {
  const Clock clock;
  SyntheticParams sp;
  sp.vertices = 2000;
  sp.frames = 100;
  const SyntheticResult syn = generate_synthetic("hinge_chain", sp);
  const PipelineConfig cfg;
  const SsdrResult fit = ssdr_solve(syn.sequence, lbg_cluster(syn.sequence, cfg.clustering), cfg.ssdr);
  const double diag = syn.sequence.bbox_diagonal();
  bool monotone = true;
  for (size_t i = 1; i < fit.objective_history.size(); ++i) {
    monotone = monotone && fit.objective_history[i] <= fit.objective_history[i - 1];
  }
  const double secs = clock.seconds();
  return {fit.rmse < 1e-3 * diag && monotone && secs < 60.0,
          fmt::format("rmse {:.3g} (bound {:.3g}), {} bones, objective {} over {} iterations, {:.2f} s", fit.rmse,
                      1e-3 * diag, fit.bones.count(), monotone ? "non-increasing" : "INCREASED",
                      fit.objective_history.size(), secs)};
}

Outcome rigidity_diagnostic() {
  SyntheticParams sp;
  sp.frames = 50;
  sp.vertices = 600;
  const RigidityEnergy rigid = rigidity_energy(generate_synthetic("rigid_body", sp).sequence, 8);
  bool ok = std::abs(rigid.arap_sum) <= 1e-12 && std::abs(rigid.distance_sum) <= 1e-12 && rigid.skipped_pairs == 0;
  std::string detail = fmt::format("rigid arap {:.3g} distance {:.3g}", rigid.arap_sum, rigid.distance_sum);

  // Unit corner tetrahedron scaled by s: each of the 12 ordered neighbour
  // pairs contributes (s - 1)^2 |d|^2, and sum |d|^2 = 2 * (3 * 1 + 3 * 2).
  Points tet(3, 4);
  tet << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
  for (double s : {0.5, 2.0, 3.0}) {
    const VertexSequence seq({tet, Points(s * tet)});
    const RigidityEnergy e = rigidity_energy(seq, 3);
    const double expected = 18.0 * (s - 1.0) * (s - 1.0);
    ok = ok && std::abs(e.arap_sum - expected) <= 1e-9 && std::abs(e.distance_sum - expected) <= 1e-9;
    detail += fmt::format("; s={} arap {:.12g} distance {:.12g} (closed form {:.12g})", s, e.arap_sum, e.distance_sum,
                          expected);
  }
  return {ok, detail};
}

Outcome skeletonization() {
  bool ok = true;
  std::string detail;
  {
    const SyntheticResult syn = generate_synthetic("hinge_chain");
    const TreeStages st = tree_stages(syn.sequence);
    const auto interior = interior_joints(st.tree);
    const double ebar = st.skeleton.mean_edge_length();
    double dist = std::numeric_limits<double>::infinity();
    if (interior.size() == 1) dist = (st.tree.joints.col(interior[0]) - syn.hinges[0]).norm();
    ok = ok && interior.size() == 1 && dist <= 2.0 * ebar;
    detail += fmt::format("hinge_chain {} interior joint(s), hinge error {:.4f} (2 edge lengths {:.4f})",
                          interior.size(), dist, 2.0 * ebar);
  }
  {
    const TreeStages st = tree_stages(generate_synthetic("y_branch").sequence);
    int branches = 0;
    int leaves = 0;
    std::vector<int> degree(st.tree.size(), 0);
    for (const auto& [p, c] : st.tree.edges()) {
      ++degree[p];
      ++degree[c];
    }
    for (int d : degree) {
      branches += d >= 3;
      leaves += d == 1;
    }
    ok = ok && branches == 1 && leaves == 3 && st.tree.size() == 4;
    detail += fmt::format("; y_branch {} joints, {} branch, {} leaves", st.tree.size(), branches, leaves);
  }
  for (const auto& kind : synthetic_kinds()) {
    const TreeStages st = tree_stages(generate_synthetic(kind).sequence);
    const bool tree_ok = is_tree(st.tree) && st.tree.check().empty();
    ok = ok && tree_ok;
    detail += fmt::format("; {} J={} edges={} {}", kind, st.tree.size(), st.tree.edges().size(),
                          tree_ok ? "acyclic" : "NOT A TREE");
  }
  return {ok, detail};
}

Outcome ik_roundtrip() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> freq(0.5, 1.5);
  bool ok = true;
  std::string detail;
  double worst_rate = 0.0;
  for (int joints : {2, 3, 4, 6}) {
    KinematicTree tree;
    tree.joints.resize(3, joints);
    for (int j = 0; j < joints; ++j) {
      tree.joints.col(j) = Vec3(j, 0, 0);
      tree.parent.push_back(j - 1);
      tree.sample.push_back(-1);
    }
    const Points rest = sample_tube(Vec3::Zero(), Vec3(joints - 1, 0, 0), 0.1, 100 * joints, 17);
    const SkeletonBinding binding = bind_vertices(rest, tree);
    std::vector<Vec3> axes(joints);
    std::vector<double> omega(joints);
    for (int j = 0; j < joints; ++j) {
      axes[j] = random_unit(rng);
      omega[j] = freq(rng);
    }
    const int frames = 100;
    const Clock clock;
    Pose current = Pose::identity(joints);
    double worst = 0.0;
    bool monotone = true;
    for (int f = 0; f < frames; ++f) {
      Pose truth = Pose::identity(joints);
      for (int j = 1; j < joints; ++j) {
        truth.rotations[j] =
            Rotation3::from_axis_angle(axes[j], kPi / 3.0 * std::sin(2.0 * kPi * omega[j] * f / frames));
      }
      truth.root_translation = Vec3(0.2 * std::sin(2.0 * kPi * f / frames), 0.1 * f / frames, 0.0);
      const Points target = skin_with_skeleton(rest, binding, tree, truth);
      // The target skeleton is the posed joint set, so both objective terms vanish at the truth.
      const Points samples = joint_positions(tree, truth);
      const PoseSolution sol = solve_pose(tree, binding, rest, target, samples, current);
      for (size_t i = 1; i < sol.loss_history.size(); ++i) {
        monotone = monotone && sol.loss_history[i] <= sol.loss_history[i - 1];
      }
      for (int j = 1; j < joints; ++j) worst = std::max(worst, geodesic_distance(sol.pose.rotations[j], truth.rotations[j]));
      current = sol.pose;
    }
    const double secs = clock.seconds();
    worst_rate = std::max(worst_rate, secs);
    ok = ok && worst < 1e-2 && monotone && secs < 30.0;
    detail += fmt::format("{}J: max error {:.3g} rad, {}, {:.2f} s/100 frames; ", joints, worst,
                          monotone ? "monotone" : "NOT MONOTONE", secs);
  }
  return {ok, detail};
}

Outcome database_structure() {
  bool ok = true;
  std::string detail;
  KinematicTree tree;
  tree.joints = Points::Zero(3, 2);
  tree.joints(0, 1) = 1.0;
  tree.parent = {-1, 0};
  tree.sample = {-1, -1};
  std::mt19937_64 rng(3);
  for (const auto& [frames, p] : std::vector<std::pair<int, int>>{{10, 7}, {7, 7}, {200, 7}}) {
    JointRotationTrack rot(frames, 2);
    for (int f = 0; f < frames; ++f) rot.at(f, 1) = random_rotation(rng);
    const BoneTrack bones(frames, 2);
    const MotionDatabase db = build_database(tree, rot, bones, p, 5);
    const int expected = frames - p + 1;
    bool strides = db.levels.size() == 6;
    for (int l = 0; l <= 5 && strides; ++l) {
      strides = level_stride(l, 5) == (1 << (5 - l)) && db.levels[l].stride == (1 << (5 - l));
    }
    ok = ok && db.finest().patch_count() == expected && strides;
    detail += fmt::format("F={} p={}: L={} (expected {}), strides {}; ", frames, p, db.finest().patch_count(),
                          expected, strides ? "2^(5-l)" : "WRONG");
  }
  return {ok, detail};
}

// Independent ranking: angle from the quaternion of a^-1 b.
std::vector<int> brute_force_order(const JointRotationTrack& source, const JointRotationTrack& query,
                                   const std::vector<int>& joints) {
  const int window = query.frames();
  std::vector<std::pair<double, int>> scored;
  for (int s = 0; s + window <= source.frames(); ++s) {
    double d = 0.0;
    for (int t = 0; t < window; ++t) {
      for (int j : joints) {
        const Eigen::Quaterniond r = source.at(s + t, j).quaternion().conjugate() * query.at(t, j).quaternion();
        const double angle = 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
        d += angle * angle;
      }
    }
    scored.emplace_back(d, s);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<int> order;
  for (const auto& [d, s] : scored) order.push_back(s);
  return order;
}

Outcome retrieval_exactness() {
  std::mt19937_64 rng(11);
  bool ok = true;
  std::string detail;
  for (const auto& [frames, joints, window] : std::vector<std::tuple<int, int, int>>{{50, 3, 7}, {500, 4, 5}, {2006, 5, 7}}) {
    JointRotationTrack source(frames, joints);
    for (int f = 0; f < frames; ++f) {
      for (int j = 0; j < joints; ++j) source.at(f, j) = random_rotation(rng);
    }
    JointRotationTrack query(window, joints);
    for (int f = 0; f < window; ++f) {
      for (int j = 0; j < joints; ++j) query.at(f, j) = random_rotation(rng);
    }
    DatabaseLevel level;
    level.stride = 1;
    level.patch = window;
    level.rotations = source;
    std::vector<int> part;
    for (int j = 0; j < joints; j += 2) part.push_back(j);
    const auto order = brute_force_order(source, query, part);
    const auto matches = match_part(level, part, query, static_cast<int>(order.size()));
    bool same = matches.size() == order.size();
    for (size_t i = 0; same && i < order.size(); ++i) same = matches[i].start == order[i];
    ok = ok && same;
    detail += fmt::format("{} patches {}; ", order.size(), same ? "identical order" : "ORDER DIFFERS");
  }
  return {ok, detail};
}

Outcome self_reconstruction() {
  const SyntheticResult syn = generate_synthetic("hinge_chain");
  const PipelineConfig cfg;
  const RigArchive rig = build_rig_or_throw(syn.sequence, cfg);
  PartMMParams params;
  params.k = 1;
  params.lambda_alpha = 1.0;
  const BoneTrack bones = animate_bones(rig, rig.poses, params);
  const double diag = syn.sequence.bbox_diagonal();
  double rot_err = 0.0;
  double trans_err = 0.0;
  for (int f = 0; f < bones.frames(); ++f) {
    for (int b = 0; b < bones.count(); ++b) {
      rot_err = std::max(rot_err, geodesic_distance(bones.at(f, b).rotation, rig.bones.at(f, b).rotation));
      trans_err = std::max(trans_err, (bones.at(f, b).translation - rig.bones.at(f, b).translation).norm());
    }
  }
  const VertexSequence out = animate(rig, rig.poses, params);
  const double rmse = sequence_rmse(out, syn.sequence);
  const double ssdr = reconstruction_rmse(syn.sequence, rig.weights, rig.bones);
  return {rot_err < 1e-6 && trans_err < 1e-6 * diag && rmse <= ssdr + 1e-3 * diag,
          fmt::format("bone rotation error {:.3g} rad, translation error {:.3g} (bound {:.3g}), vertex rmse {:.3g} "
                      "(bound {:.3g})",
                      rot_err, trans_err, 1e-6 * diag, rmse, ssdr + 1e-3 * diag)};
}

Outcome relative_ordering() {
  const Clock clock;
  SyntheticParams train;
  train.frames = 1000;
  train.vertices = 1000;
  train.seed = 21;
  const SyntheticResult training = generate_synthetic("soft_chain", train);
  SyntheticParams held = train;
  held.frames = 240;
  held.held_out = true;
  const SyntheticResult truth = generate_synthetic("soft_chain", held);

  const PipelineConfig cfg;
  const RigArchive rig = build_rig_or_throw(training.sequence, cfg);
  const SkeletonBinding binding = bind_vertices(rig.rest, rig.tree);
  const JointRotationTrack query =
      solve_sequence(rig.tree, binding, rig.skeleton, rig.rest, truth.sequence, cfg.ik, -1).track;

  PartMMParams part = cfg.partmm;
  PartMMParams full = cfg.partmm;
  full.full_body = true;
  const double part_rmse = sequence_rmse(animate(rig, query, part), truth.sequence);
  const double full_rmse = sequence_rmse(animate(rig, query, full), truth.sequence);

  std::vector<Points> rigid;
  for (int f = 0; f < truth.sequence.frame_count(); ++f) {
    rigid.push_back(lbs_apply(rig.rest, truth.weights.values, truth.bones.frame(f)));
  }
  const double rigid_rmse = sequence_rmse(VertexSequence(std::move(rigid)), truth.sequence);
  const double secs = clock.seconds();
  return {part_rmse < 0.95 * full_rmse && part_rmse < 0.95 * rigid_rmse && secs < 300.0,
          fmt::format("PartMM {:.5f}, FullMM {:.5f}, rigid LBS {:.5f} ({} bones, {} joints), {:.1f} s", part_rmse,
                      full_rmse, rigid_rmse, rig.bone_count(), rig.joint_count(), secs)};
}

Outcome determinism() {
  SyntheticParams sp;
  sp.frames = 60;
  sp.vertices = 800;
  const VertexSequence seq = generate_synthetic("hinge_chain", sp).sequence;
  const fs::path dir = fs::temp_directory_path() / fmt::format("skelebones_det_{}", ::getpid());
  fs::create_directories(dir);
  std::vector<std::string> rigs;
  std::vector<std::string> anims;
  for (int run = 0; run < 2; ++run) {
    const PipelineConfig cfg;
    const RigArchive rig = build_rig_or_throw(seq, cfg);
    const fs::path rig_path = dir / fmt::format("run{}.rig", run);
    const fs::path out_path = dir / fmt::format("run{}.vseq", run);
    save_rig(rig, rig_path);
    save_vseq(animate(load_rig(rig_path), rig.poses, cfg.partmm), out_path);
    rigs.push_back(read_bytes(rig_path));
    anims.push_back(read_bytes(out_path));
  }
  fs::remove_all(dir);
  const bool ok = !rigs[0].empty() && rigs[0] == rigs[1] && !anims[0].empty() && anims[0] == anims[1];
  return {ok, fmt::format("archives {} ({} bytes), sequences {} ({} bytes)", rigs[0] == rigs[1] ? "identical" : "DIFFER",
                          rigs[0].size(), anims[0] == anims[1] ? "identical" : "DIFFER", anims[0].size())};
}

Outcome progressive_refinement() {
  SyntheticParams sp;
  sp.segments = 3;
  sp.frames = 200;
  sp.stage_split = 100;
  const SyntheticResult syn = generate_synthetic("hinge_chain", sp);
  const PipelineConfig cfg;
  const RigArchive prior = build_rig_or_throw(syn.sequence.slice(0, 100), cfg);
  const RigResult refined = refine_rig(prior, syn.sequence, cfg);
  if (!refined.ok()) return {false, "refinement failed: " + refined.error};
  const auto before = interior_joints(prior.tree);
  const auto after = interior_joints(refined.rig.tree);
  const double snap = 2.0 * refined.rig.skeleton.mean_edge_length();
  double retained = std::numeric_limits<double>::infinity();
  if (before.size() == 1) {
    for (int j : after) retained = std::min(retained, (refined.rig.tree.joints.col(j) - prior.tree.joints.col(before[0])).norm());
  }
  return {before.size() == 1 && after.size() == 2 && retained <= snap,
          fmt::format("first half {} interior joint(s), full sequence {}, first joint moved {:.4f} (snap radius {:.4f})",
                      before.size(), after.size(), retained, snap)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"kernel exactness", kernel_exactness},
      {"ssdr fidelity", ssdr_fidelity},
      {"rigidity diagnostic", rigidity_diagnostic},
      {"skeletonization", skeletonization},
      {"ik roundtrip", ik_roundtrip},
      {"database structure", database_structure},
      {"retrieval exactness", retrieval_exactness},
      {"self-reconstruction", self_reconstruction},
      {"relative ordering", relative_ordering},
      {"determinism", determinism},
      {"progressive refinement", progressive_refinement},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const Clock clock;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    fmt::print("{} [{}] {}: {} ({:.1f} s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail,
               clock.seconds());
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
