#include "skelebones/partmm.hpp"

#include "skelebones/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace skelebones {

PartDecomposition PartDecomposition::single(int joint_count, int bone_count) {
  PartDecomposition d;
  d.joints.emplace_back(joint_count);
  std::iota(d.joints[0].begin(), d.joints[0].end(), 0);
  d.bones.emplace_back(bone_count);
  std::iota(d.bones[0].begin(), d.bones[0].end(), 0);
  d.bone_part.assign(bone_count, 0);
  return d;
}

namespace {

struct PartTree {
  const KinematicTree& tree;
  std::vector<std::vector<int>> kids;
  std::vector<int> depth;

  explicit PartTree(const KinematicTree& t) : tree(t), kids(t.children()), depth(t.size(), 0) {
    for (int j : t.dfs_order()) {
      if (t.parent[j] >= 0) depth[j] = depth[t.parent[j]] + 1;
    }
  }

  std::vector<int> subtree(int top) const {
    std::vector<int> out;
    std::vector<int> stack{top};
    while (!stack.empty()) {
      const int j = stack.back();
      stack.pop_back();
      out.push_back(j);
      for (int c : kids[j]) stack.push_back(c);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  int top_of(const std::vector<int>& part) const {
    int best = part.front();
    for (int j : part) {
      if (depth[j] < depth[best]) best = j;
    }
    return best;
  }
};

bool contains(const std::vector<int>& sorted, int j) { return std::binary_search(sorted.begin(), sorted.end(), j); }

// Splits `part` at its first branch, or halves it when it is a chain.
std::vector<std::vector<int>> split_part(const PartTree& pt, const std::vector<int>& part) {
  std::vector<int> chain{pt.top_of(part)};
  while (true) {
    std::vector<int> inside;
    for (int c : pt.kids[chain.back()]) {
      if (contains(part, c)) inside.push_back(c);
    }
    if (inside.size() == 1) {
      chain.push_back(inside[0]);
      continue;
    }
    if (inside.empty()) {
      // pure chain: keep the upper half
      const size_t half = (chain.size() + 1) / 2;
      std::vector<int> upper(chain.begin(), chain.begin() + static_cast<std::ptrdiff_t>(half));
      std::vector<int> lower(chain.begin() + static_cast<std::ptrdiff_t>(half), chain.end());
      std::sort(upper.begin(), upper.end());
      std::sort(lower.begin(), lower.end());
      return {upper, lower};
    }
    std::vector<std::vector<int>> out;
    std::sort(chain.begin(), chain.end());
    out.push_back(chain);
    for (int c : inside) {
      std::vector<int> sub;
      for (int j : pt.subtree(c)) {
        if (contains(part, j)) sub.push_back(j);
      }
      out.push_back(sub);
    }
    return out;
  }
}

}  // namespace

PartDecomposition decompose_parts(const KinematicTree& tree, const SkinningMatrix& weights,
                                  const SkeletonBinding& binding, int target_parts) {
  const int jn = tree.size();
  const int nb = weights.bones();
  if (target_parts < 1) throw UsageError("part count must be >= 1");
  if (binding.weights.rows() != weights.vertices() || binding.weights.cols() != jn) {
    throw ShapeError("decompose_parts: binding does not match weights and tree");
  }
  if (target_parts > jn) {
    spdlog::warn("decompose_parts: {} parts requested for {} joints; using {}", target_parts, jn, jn);
    target_parts = jn;
  }
  if (target_parts == 1) return PartDecomposition::single(jn, nb);

  const PartTree pt(tree);
  std::vector<std::vector<int>> parts{{tree.root}};
  for (int c : pt.kids[tree.root]) parts.push_back(pt.subtree(c));
  auto is_root_part = [&](const std::vector<int>& p) { return contains(p, tree.root); };

  while (static_cast<int>(parts.size()) < target_parts) {
    int pick = -1;
    for (int p = 0; p < static_cast<int>(parts.size()); ++p) {
      if (is_root_part(parts[p]) || parts[p].size() < 2) continue;
      if (pick < 0 || parts[p].size() > parts[pick].size() ||
          (parts[p].size() == parts[pick].size() && pt.top_of(parts[p]) < pt.top_of(parts[pick]))) {
        pick = p;
      }
    }
    if (pick < 0) break;
    auto pieces = split_part(pt, parts[pick]);
    parts.erase(parts.begin() + pick);
    parts.insert(parts.end(), pieces.begin(), pieces.end());
  }
  while (static_cast<int>(parts.size()) > target_parts) {
    int pick = -1;
    auto key = [&](int p) {
      const int top = pt.top_of(parts[p]);
      return std::make_tuple(parts[p].size(), pt.depth[top], top);
    };
    for (int p = 0; p < static_cast<int>(parts.size()); ++p) {
      if (is_root_part(parts[p])) continue;
      if (pick < 0 || key(p) < key(pick)) pick = p;
    }
    const int parent = tree.parent[pt.top_of(parts[pick])];
    int into = 0;
    while (!contains(parts[into], parent)) ++into;
    parts[into].insert(parts[into].end(), parts[pick].begin(), parts[pick].end());
    std::sort(parts[into].begin(), parts[into].end());
    parts.erase(parts.begin() + pick);
  }
  std::sort(parts.begin(), parts.end(), [&](const auto& a, const auto& b) { return pt.top_of(a) < pt.top_of(b); });
  // the root part first
  std::stable_partition(parts.begin(), parts.end(), is_root_part);

  PartDecomposition d;
  const int np = static_cast<int>(parts.size());
  Eigen::MatrixXd owned = Eigen::MatrixXd::Zero(jn, np);
  for (int p = 0; p < np; ++p) {
    for (int j : parts[p]) owned(j, p) = 1.0;
    std::vector<int> joints = parts[p];
    const int parent = tree.parent[pt.top_of(parts[p])];
    if (parent >= 0) joints.push_back(parent);
    std::sort(joints.begin(), joints.end());
    d.joints.push_back(joints);
  }
  // mass(b, p) = sum_i W_ib * (binding of vertex i on part p's bones)
  const Eigen::MatrixXd mass = weights.values.transpose() * (binding.weights * owned);
  d.bones.assign(np, {});
  d.bone_part.assign(nb, 0);
  for (int b = 0; b < nb; ++b) {
    int best = 0;
    for (int p = 1; p < np; ++p) {
      if (mass(b, p) > mass(b, best)) best = p;
    }
    d.bone_part[b] = best;
    d.bones[best].push_back(b);
  }
  return d;
}

int level_stride(int level, int levels) {
  if (level < 0 || level > levels) throw IndexError("pyramid level out of range");
  return 1 << (levels - level);
}

MotionDatabase build_database(const KinematicTree& tree, const JointRotationTrack& rotations, const BoneTrack& bones,
                              int patch_size, int levels) {
  const int frames = rotations.frames();
  if (patch_size < 1) throw UsageError("patch size must be >= 1");
  if (levels < 0 || levels > 20) throw UsageError("level count out of range");
  if (rotations.joints() != tree.size()) throw ShapeError("build_database: rotations do not match the tree");
  if (bones.frames() != frames) throw ShapeError("build_database: bone and rotation frame counts differ");
  if (frames < patch_size) {
    throw InsufficientFrames("database needs at least " + std::to_string(patch_size) + " frames, got " +
                             std::to_string(frames));
  }

  MotionDatabase db;
  db.tree = tree;
  db.patch_size = patch_size;
  double total = 0.0;
  int count = 0;
  for (const auto& [p, c] : tree.edges()) {
    total += (tree.joints.col(c) - tree.joints.col(p)).norm();
    ++count;
  }
  db.bone_scale = count > 0 && total > 0.0 ? total / count : 1.0;

  for (int level = 0; level <= levels; ++level) {
    DatabaseLevel lvl;
    lvl.stride = level_stride(level, levels);
    const int length = (frames + lvl.stride - 1) / lvl.stride;
    lvl.patch = std::min(patch_size, length);
    lvl.rotations = JointRotationTrack(length, tree.size());
    lvl.bones = BoneTrack(length, bones.count());
    for (int i = 0; i < length; ++i) {
      const int f = i * lvl.stride;
      lvl.rotations.set_pose(i, rotations.pose(f));
      for (int b = 0; b < bones.count(); ++b) lvl.bones.at(i, b) = bones.at(f, b);
      lvl.globals.push_back(forward_kinematics(tree, lvl.rotations.pose(i)));
    }
    db.levels.push_back(std::move(lvl));
  }
  return db;
}

namespace {

// dist(q, d) = sum over part joints of squared geodesic distance.
Eigen::MatrixXd frame_distances(const JointRotationTrack& query, const JointRotationTrack& source,
                                const std::vector<int>& joints) {
  Eigen::MatrixXd table(query.frames(), source.frames());
  for (int q = 0; q < query.frames(); ++q) {
    for (int d = 0; d < source.frames(); ++d) {
      double sum = 0.0;
      for (int j : joints) {
        const double g = geodesic_distance(query.at(q, j), source.at(d, j));
        sum += g * g;
      }
      table(q, d) = sum;
    }
  }
  return table;
}

std::vector<PatchMatch> rank_windows(const Eigen::MatrixXd& table, int query_start, int window, int k) {
  const int count = static_cast<int>(table.cols()) - window + 1;
  std::vector<PatchMatch> all(std::max(count, 0));
  for (int m = 0; m < count; ++m) {
    double sum = 0.0;
    for (int t = 0; t < window; ++t) sum += table(query_start + t, m + t);
    all[m] = {m, sum};
  }
  const size_t take = std::min<size_t>(static_cast<size_t>(std::max(k, 0)), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const PatchMatch& a, const PatchMatch& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.start < b.start);
                    });
  all.resize(take);
  return all;
}

void check_part(const std::vector<int>& part, int joints) {
  if (part.empty()) throw UsageError("empty part");
  for (int j : part) {
    if (j < 0 || j >= joints) throw IndexError("part joint out of range");
  }
}

}  // namespace

std::vector<PatchMatch> match_part(const DatabaseLevel& level, const std::vector<int>& part_joints,
                                   const JointRotationTrack& query, int k) {
  check_part(part_joints, level.rotations.joints());
  if (query.joints() != level.rotations.joints()) throw ShapeError("match_part: query joint count differs");
  const int window = query.frames();
  if (window < 1 || window > level.length()) throw ShapeError("match_part: query window longer than the level");
  const int available = level.length() - window + 1;
  if (k > available) spdlog::warn("match_part: k = {} exceeds the {} available patches", k, available);
  return rank_windows(frame_distances(query, level.rotations, part_joints), 0, window, k);
}

Alignment align_patch(const KinematicTree& tree, const std::vector<int>& part_joints,
                      const std::vector<RigidTransform>& query_globals,
                      const std::vector<RigidTransform>& match_globals, double axis_scale) {
  check_part(part_joints, tree.size());
  int top = part_joints.front();
  for (int j : part_joints) {
    if (tree.parent[j] < 0 || !std::count(part_joints.begin(), part_joints.end(), tree.parent[j])) {
      top = j;
      break;
    }
  }
  Alignment a;
  a.source_pivot = match_globals[top].translation;
  a.target_pivot = query_globals[top].translation;
  if (part_joints.size() < 2) return a;

  bool same = true;
  for (int j : part_joints) {
    same = same && match_globals[j].rotation == query_globals[j].rotation &&
           match_globals[j].translation - a.source_pivot == query_globals[j].translation - a.target_pivot;
  }
  if (same) {
    a.fitted = true;
    return a;
  }

  const Eigen::Index n = static_cast<Eigen::Index>(part_joints.size()) * 4;
  Points src(3, n);
  Points dst(3, n);
  Eigen::Index c = 0;
  for (int j : part_joints) {
    const Vec3 ps = match_globals[j].translation - a.source_pivot;
    const Vec3 pd = query_globals[j].translation - a.target_pivot;
    const Mat3 rs = match_globals[j].rotation.matrix();
    const Mat3 rd = query_globals[j].rotation.matrix();
    src.col(c) = ps;
    dst.col(c++) = pd;
    for (int axis = 0; axis < 3; ++axis) {
      src.col(c) = ps + axis_scale * rs.col(axis);
      dst.col(c++) = pd + axis_scale * rd.col(axis);
    }
  }
  try {
    a.rotation = kabsch_fit(src, dst, {}, Centering::None);
    a.fitted = true;
  } catch (const DegenerateConfiguration&) {
    spdlog::debug("align_patch: degenerate part, using identity");
  }
  return a;
}

namespace {

// Level frames of the query at `stride`.
JointRotationTrack subsample(const JointRotationTrack& query, int stride) {
  const int length = (query.frames() + stride - 1) / stride;
  JointRotationTrack out(length, query.joints());
  for (int i = 0; i < length; ++i) out.set_pose(i, query.pose(i * stride));
  return out;
}

RigidTransform mix(const RigidTransform& a, const RigidTransform& b, double alpha) {
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  const RigidTransform ts[2] = {a, b};
  const double ws[2] = {1.0 - alpha, alpha};
  return blend_transforms(ts, ws);
}

// Transforms of the coarser level (frames at multiples of `stride`) at `frame`.
RigidTransform upsample(const std::vector<RigidTransform>& coarse, int bones, int b, int stride, int frame) {
  const int length = static_cast<int>(coarse.size()) / bones;
  const int i0 = frame / stride;
  if (i0 >= length - 1) return coarse[static_cast<size_t>(length - 1) * bones + b];
  const double alpha = static_cast<double>(frame - i0 * stride) / stride;
  return mix(coarse[static_cast<size_t>(i0) * bones + b], coarse[static_cast<size_t>(i0 + 1) * bones + b], alpha);
}

struct Contribution {
  std::vector<RigidTransform> transforms;
  std::vector<double> weights;
};

}  // namespace

BoneTrack blend_pyramid(const MotionDatabase& db, const PartDecomposition& parts, const JointRotationTrack& query,
                        int bone_count, int k, double lambda_alpha) {
  if (query.frames() < 1) throw ShapeError("blend_pyramid: empty query");
  if (query.joints() != db.tree.size()) throw UsageError("query joint count differs from the rig tree");
  if (static_cast<int>(parts.bone_part.size()) != bone_count) throw ShapeError("blend_pyramid: bone partition size");
  if (k < 1) throw UsageError("k must be >= 1");
  if (!(lambda_alpha >= 0.0 && lambda_alpha <= 1.0)) throw UsageError("blend weight must lie in [0, 1]");

  const int frames = query.frames();
  BoneTrack out(frames, bone_count);
  for (int p = 0; p < parts.size(); ++p) {
    const auto& joints = parts.joints[p];
    const auto& bones = parts.bones[p];
    const int nb = static_cast<int>(bones.size());
    if (nb == 0) continue;
    std::vector<RigidTransform> prev;
    int prev_stride = 0;
    for (const DatabaseLevel& level : db.levels) {
      if (level.patch_count() < 1) {
        spdlog::warn("blend_pyramid: empty database level (stride {}) skipped", level.stride);
        continue;
      }
      const JointRotationTrack q = subsample(query, level.stride);
      std::vector<std::vector<RigidTransform>> q_globals;
      for (int i = 0; i < q.frames(); ++i) q_globals.push_back(forward_kinematics(db.tree, q.pose(i)));
      const int window = std::min(level.patch, q.frames());
      if (window < db.patch_size && level.stride == 1) {
        spdlog::info("blend_pyramid: query shorter than the patch size; using windows of {}", window);
      }
      const Eigen::MatrixXd table = frame_distances(q, level.rotations, joints);
      const int center = window / 2;

      std::vector<Contribution> acc(static_cast<size_t>(q.frames()) * nb);
      for (int s = 0; s + window <= q.frames(); ++s) {
        for (const PatchMatch& m : rank_windows(table, s, window, k)) {
          const Alignment align = align_patch(db.tree, joints, q_globals[s + center],
                                              level.globals[m.start + center], db.bone_scale);
          const double w = 1.0 / (m.distance + 1e-8);
          for (int t = 0; t < window; ++t) {
            for (int a = 0; a < nb; ++a) {
              Contribution& c = acc[static_cast<size_t>(s + t) * nb + a];
              c.transforms.push_back(align.apply(level.bones.at(m.start + t, bones[a])));
              c.weights.push_back(w);
            }
          }
        }
      }
      std::vector<RigidTransform> cur(acc.size());
      for (int i = 0; i < q.frames(); ++i) {
        for (int a = 0; a < nb; ++a) {
          const size_t idx = static_cast<size_t>(i) * nb + a;
          const RigidTransform bar = blend_transforms(acc[idx].transforms, acc[idx].weights);
          cur[idx] = prev.empty() ? bar : mix(upsample(prev, nb, a, prev_stride, i * level.stride), bar, lambda_alpha);
        }
      }
      prev = std::move(cur);
      prev_stride = level.stride;
    }
    for (int f = 0; f < frames; ++f) {
      for (int a = 0; a < nb; ++a) out.at(f, bones[a]) = upsample(prev, nb, a, prev_stride, f);
    }
  }
  return out;
}

BoneTrack full_body_match(const MotionDatabase& db, const JointRotationTrack& query, int bone_count, int k,
                          double lambda_alpha) {
  return blend_pyramid(db, PartDecomposition::single(db.tree.size(), bone_count), query, bone_count, k, lambda_alpha);
}

BoneTrack animate_bones(const RigArchive& rig, const JointRotationTrack& query, const PartMMParams& params) {
  if (rig.partial) throw UsageError("cannot animate a partial rig (failed stage: " + rig.failed_stage + ")");
  if (query.joints() != rig.joint_count()) {
    throw UsageError("query has " + std::to_string(query.joints()) + " joints, rig tree has " +
                     std::to_string(rig.joint_count()));
  }
  const MotionDatabase db = build_database(rig.tree, rig.poses, rig.bones, params.patch_size, params.levels);
  const PartDecomposition parts =
      params.full_body ? PartDecomposition::single(rig.joint_count(), rig.bone_count())
                       : decompose_parts(rig.tree, rig.weights, bind_vertices(rig.rest, rig.tree), params.parts);
  return blend_pyramid(db, parts, query, rig.bone_count(), params.k, params.lambda_alpha);
}

VertexSequence animate(const RigArchive& rig, const JointRotationTrack& query, const PartMMParams& params) {
  const BoneTrack bones = animate_bones(rig, query, params);
  std::vector<Points> frames;
  frames.reserve(bones.frames());
  for (int f = 0; f < bones.frames(); ++f) frames.push_back(lbs_apply(rig.rest, rig.weights.values, bones.frame(f)));
  return VertexSequence(std::move(frames));
}

}  // namespace skelebones
