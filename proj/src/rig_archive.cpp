#include "skelebones/rig_archive.hpp"

#include "skelebones/errors.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace skelebones {

namespace {

constexpr const char* kRigMagic = "SKELEBONES-RIG";
constexpr const char* kPosesMagic = "SKELEBONES-POSES";
constexpr const char* kSkeletonMagic = "SKELEBONES-SKELETON";
constexpr int kFormatVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    sep();
    out_.write(buf, res.ptr - buf);
    return *this;
  }
  Writer& integer(long long v) {
    sep();
    out_ << v;
    return *this;
  }
  Writer& word(std::string_view w) {
    sep();
    out_ << w;
    return *this;
  }
  /// Length-prefixed string so values may hold spaces.
  Writer& str(std::string_view s) {
    integer(static_cast<long long>(s.size()));
    out_ << ' ' << s;
    return *this;
  }
  Writer& quat(const Rotation3& r) { return num(r.w()).num(r.x()).num(r.y()).num(r.z()); }
  Writer& vec(const Vec3& v) { return num(v.x()).num(v.y()).num(v.z()); }
  void end_line() {
    out_ << '\n';
    fresh_ = true;
  }

 private:
  void sep() {
    if (!fresh_) out_ << ' ';
    fresh_ = false;
  }
  std::ostream& out_;
  bool fresh_ = true;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string tok;
    if (!(in_ >> tok)) throw CorruptArchive("archive truncated");
    return tok;
  }
  void expect(std::string_view w) {
    const std::string tok = word();
    if (tok != w) throw CorruptArchive("expected '" + std::string(w) + "', found '" + tok + "'");
  }
  double num() {
    const std::string tok = word();
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw CorruptArchive("malformed number '" + tok + "'");
    }
    return v;
  }
  long long integer() {
    const std::string tok = word();
    long long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw CorruptArchive("malformed integer '" + tok + "'");
    }
    return v;
  }
  int count(const char* what, long long max = 1LL << 31) {
    const long long v = integer();
    if (v < 0 || v >= max) throw CorruptArchive(std::string(what) + " out of range");
    return static_cast<int>(v);
  }
  std::string str() {
    const long long len = integer();
    if (len < 0 || len > (1LL << 30)) throw CorruptArchive("bad string length");
    in_.get();
    std::string s(static_cast<size_t>(len), '\0');
    if (len > 0 && !in_.read(s.data(), len)) throw CorruptArchive("archive truncated inside a string");
    return s;
  }
  Rotation3 quat() {
    const double w = num();
    const double x = num();
    const double y = num();
    const double z = num();
    const double n2 = w * w + x * x + y * y + z * z;
    if (!std::isfinite(n2) || std::abs(n2 - 1.0) > 1e-9) throw CorruptArchive("rotation is not a unit quaternion");
    return Rotation3(w, x, y, z);
  }
  Vec3 vec() {
    Vec3 v;
    v.x() = num();
    v.y() = num();
    v.z() = num();
    return v;
  }

 private:
  std::istream& in_;
};

void write_poses(Writer& w, const JointRotationTrack& poses) {
  w.word("POSES").integer(poses.frames()).integer(poses.joints());
  w.end_line();
  for (int f = 0; f < poses.frames(); ++f) {
    w.vec(poses.translation(f));
    for (int j = 0; j < poses.joints(); ++j) w.quat(poses.at(f, j));
    w.end_line();
  }
}

JointRotationTrack read_poses(Reader& r) {
  r.expect("POSES");
  const int frames = r.count("pose frame count");
  const int joints = r.count("pose joint count");
  JointRotationTrack poses(frames, joints);
  for (int f = 0; f < frames; ++f) {
    poses.translation(f) = r.vec();
    for (int j = 0; j < joints; ++j) poses.at(f, j) = r.quat();
  }
  return poses;
}

void write_skeleton(Writer& w, const CurveSkeleton& skel) {
  w.word("SKELETON").integer(skel.size()).integer(static_cast<long long>(skel.edges.size()));
  w.end_line();
  for (int j = 0; j < skel.size(); ++j) {
    w.vec(skel.samples.col(j));
    w.end_line();
  }
  for (const auto& [a, b] : skel.edges) {
    w.integer(a).integer(b);
    w.end_line();
  }
}

void read_skeleton_body(Reader& r, Points& samples, std::vector<std::pair<int, int>>& edges) {
  r.expect("SKELETON");
  const int m = r.count("skeleton sample count");
  const int e = r.count("skeleton edge count");
  samples.resize(3, m);
  for (int j = 0; j < m; ++j) samples.col(j) = r.vec();
  edges.clear();
  for (int k = 0; k < e; ++k) {
    const int a = r.count("skeleton edge index", m);
    const int b = r.count("skeleton edge index", m);
    edges.emplace_back(a, b);
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  return in;
}

void expect_header(Reader& r, const char* magic) {
  const std::string tok = r.word();
  if (tok != magic) throw CorruptArchive(std::string("bad magic: expected ") + magic);
  if (r.integer() != kFormatVersion) throw CorruptArchive("unsupported format version");
}

}  // namespace

std::string RigArchive::check() const {
  const int n = vertex_count();
  const int f = frame_count();
  if (n == 0) return "rest: no vertices";
  if (!rest.allFinite()) return "rest: non-finite positions";
  if (canonical < 0 || (f > 0 && canonical >= f)) return "meta: canonical frame out of range";
  if (weights.values.size() > 0 || !partial) {
    if (weights.vertices() != n) return "weights: row count differs from vertex count";
    if (weights.bones() != bones.count()) return "weights: column count differs from bone count";
    if (const std::string err = weights.check(); !err.empty()) return "weights: " + err;
    for (int b = 0; b < bones.count(); ++b) {
      const RigidTransform& t = bones.at(canonical, b);
      if (!(t.rotation == Rotation3::identity()) || !t.translation.isZero(0.0)) {
        return "bones: canonical-frame transform of bone " + std::to_string(b) + " is not identity";
      }
    }
  }
  if (skeleton.size() > 0 || !partial) {
    if (const std::string err = skeleton.check(); !err.empty()) return "skeleton: " + err;
    if (static_cast<int>(skeleton.vertex_sample.size()) != n) return "skeleton: correspondence covers wrong vertex count";
  }
  if (tree.size() > 0 || !partial) {
    if (const std::string err = tree.check(); !err.empty()) return "tree: " + err;
    for (int j = 0; j < tree.size(); ++j) {
      if (j < static_cast<int>(tree.sample.size()) && tree.sample[j] >= skeleton.size()) return "tree: joint sample index out of range";
    }
  }
  if (poses.frames() > 0 || !partial) {
    if (poses.joints() != tree.size()) return "poses: joint count differs from tree";
    if (poses.frames() != f) return "poses: frame count differs from bones";
  }
  return {};
}

bool RigArchive::operator==(const RigArchive& rhs) const {
  return units == rhs.units && canonical == rhs.canonical && config == rhs.config &&
         config_hash == rhs.config_hash && partial == rhs.partial && failed_stage == rhs.failed_stage &&
         rest.cols() == rhs.rest.cols() && rest == rhs.rest && weights.values.rows() == rhs.weights.values.rows() &&
         weights.values.cols() == rhs.weights.values.cols() && weights.values == rhs.weights.values &&
         weights.max_per_row == rhs.weights.max_per_row && bones == rhs.bones &&
         skeleton.samples.cols() == rhs.skeleton.samples.cols() && skeleton.samples == rhs.skeleton.samples &&
         skeleton.edges == rhs.skeleton.edges && skeleton.correspondence == rhs.skeleton.correspondence &&
         tree == rhs.tree && poses == rhs.poses;
}

void save_rig(const RigArchive& rig, const fs::path& path) {
  if (const std::string err = rig.check(); !err.empty()) throw CorruptArchive("refusing to save invalid rig: " + err);
  std::ofstream out = open_out(path);
  Writer w(out);
  w.word(kRigMagic).integer(kFormatVersion);
  w.end_line();

  w.word("META");
  w.end_line();
  w.word("units").str(rig.units);
  w.end_line();
  w.word("canonical").integer(rig.canonical);
  w.end_line();
  w.word("partial").integer(rig.partial ? 1 : 0);
  w.end_line();
  w.word("failed_stage").str(rig.failed_stage);
  w.end_line();
  w.word("config_hash").integer(static_cast<long long>(rig.config_hash));
  w.end_line();
  w.word("config").str(rig.config);
  w.end_line();

  w.word("REST").integer(rig.vertex_count());
  w.end_line();
  for (int i = 0; i < rig.vertex_count(); ++i) {
    w.vec(rig.rest.col(i));
    w.end_line();
  }

  w.word("WEIGHTS").integer(rig.weights.vertices()).integer(rig.weights.bones()).integer(rig.weights.max_per_row);
  w.end_line();
  for (int i = 0; i < rig.weights.vertices(); ++i) {
    int nnz = 0;
    for (int b = 0; b < rig.weights.bones(); ++b) nnz += rig.weights(i, b) != 0.0;
    w.integer(nnz);
    for (int b = 0; b < rig.weights.bones(); ++b) {
      if (rig.weights(i, b) != 0.0) w.integer(b).num(rig.weights(i, b));
    }
    w.end_line();
  }

  w.word("BONES").integer(rig.bones.frames()).integer(rig.bones.count());
  w.end_line();
  for (int f = 0; f < rig.bones.frames(); ++f) {
    for (int b = 0; b < rig.bones.count(); ++b) {
      w.quat(rig.bones.at(f, b).rotation).vec(rig.bones.at(f, b).translation);
      w.end_line();
    }
  }

  write_skeleton(w, rig.skeleton);
  w.word("CORRESPONDENCE").integer(rig.skeleton.size());
  w.end_line();
  for (const auto& members : rig.skeleton.correspondence) {
    w.integer(static_cast<long long>(members.size()));
    for (int i : members) w.integer(i);
    w.end_line();
  }

  w.word("TREE").integer(rig.tree.size()).integer(rig.tree.root);
  w.end_line();
  for (int j = 0; j < rig.tree.size(); ++j) {
    w.integer(rig.tree.parent[j]).integer(rig.tree.sample[j]).vec(rig.tree.joints.col(j));
    w.end_line();
  }

  write_poses(w, rig.poses);
  w.word("END");
  w.end_line();
  if (!out) throw IoError("write failed: " + path.string());
}

RigArchive load_rig(const fs::path& path) {
  std::ifstream in = open_in(path);
  Reader r(in);
  expect_header(r, kRigMagic);
  RigArchive rig;

  r.expect("META");
  r.expect("units");
  rig.units = r.str();
  r.expect("canonical");
  rig.canonical = r.count("canonical frame");
  r.expect("partial");
  rig.partial = r.integer() != 0;
  r.expect("failed_stage");
  rig.failed_stage = r.str();
  r.expect("config_hash");
  rig.config_hash = static_cast<std::uint64_t>(r.integer());
  r.expect("config");
  rig.config = r.str();

  r.expect("REST");
  const int n = r.count("vertex count");
  rig.rest.resize(3, n);
  for (int i = 0; i < n; ++i) rig.rest.col(i) = r.vec();

  r.expect("WEIGHTS");
  const int wn = r.count("weight rows");
  const int wb = r.count("weight columns");
  rig.weights.max_per_row = r.count("weights per row");
  rig.weights.values = Eigen::MatrixXd::Zero(wn, wb);
  for (int i = 0; i < wn; ++i) {
    const int nnz = r.count("row non-zero count", wb + 1LL);
    for (int k = 0; k < nnz; ++k) {
      const int b = r.count("weight column", wb);
      rig.weights.values(i, b) = r.num();
    }
  }

  r.expect("BONES");
  const int frames = r.count("bone frame count");
  const int bones = r.count("bone count");
  rig.bones = BoneTrack(frames, bones);
  for (int f = 0; f < frames; ++f) {
    for (int b = 0; b < bones; ++b) {
      rig.bones.at(f, b).rotation = r.quat();
      rig.bones.at(f, b).translation = r.vec();
    }
  }

  read_skeleton_body(r, rig.skeleton.samples, rig.skeleton.edges);
  r.expect("CORRESPONDENCE");
  const int m = r.count("correspondence count");
  if (m != rig.skeleton.size()) throw CorruptArchive("skeleton: correspondence count differs from sample count");
  rig.skeleton.correspondence.resize(m);
  rig.skeleton.vertex_sample.assign(n, -1);
  for (int j = 0; j < m; ++j) {
    const int count = r.count("correspondence size", n + 1LL);
    for (int k = 0; k < count; ++k) {
      const int i = r.count("corresponded vertex", n);
      if (rig.skeleton.vertex_sample[i] != -1) throw CorruptArchive("skeleton: vertex corresponded twice");
      rig.skeleton.vertex_sample[i] = j;
      rig.skeleton.correspondence[j].push_back(i);
    }
  }
  if (m > 0) {
    for (int i = 0; i < n; ++i) {
      if (rig.skeleton.vertex_sample[i] < 0) throw CorruptArchive("skeleton: vertex without correspondence");
    }
  } else {
    rig.skeleton.vertex_sample.clear();
  }

  r.expect("TREE");
  const int jn = r.count("joint count");
  rig.tree.root = r.count("root index");
  rig.tree.joints.resize(3, jn);
  rig.tree.parent.resize(jn);
  rig.tree.sample.resize(jn);
  for (int j = 0; j < jn; ++j) {
    rig.tree.parent[j] = static_cast<int>(r.integer());
    rig.tree.sample[j] = static_cast<int>(r.integer());
    rig.tree.joints.col(j) = r.vec();
  }

  rig.poses = read_poses(r);
  r.expect("END");
  if (const std::string err = rig.check(); !err.empty()) throw CorruptArchive(err);
  return rig;
}

void save_poses(const JointRotationTrack& poses, const fs::path& path) {
  std::ofstream out = open_out(path);
  Writer w(out);
  w.word(kPosesMagic).integer(kFormatVersion);
  w.end_line();
  write_poses(w, poses);
  w.word("END");
  w.end_line();
  if (!out) throw IoError("write failed: " + path.string());
}

JointRotationTrack load_poses(const fs::path& path) {
  std::ifstream in = open_in(path);
  Reader r(in);
  expect_header(r, kPosesMagic);
  JointRotationTrack poses = read_poses(r);
  r.expect("END");
  return poses;
}

void save_skeleton(const CurveSkeleton& skel, const fs::path& path) {
  std::ofstream out = open_out(path);
  Writer w(out);
  w.word(kSkeletonMagic).integer(kFormatVersion);
  w.end_line();
  write_skeleton(w, skel);
  w.word("END");
  w.end_line();
}

void load_skeleton(const fs::path& path, Points& samples, std::vector<std::pair<int, int>>& edges) {
  std::ifstream in = open_in(path);
  Reader r(in);
  expect_header(r, kSkeletonMagic);
  read_skeleton_body(r, samples, edges);
  r.expect("END");
}

std::array<std::uint8_t, 3> bone_color(int b) {
  // golden-ratio hue walk, full saturation and value
  const double h = std::fmod(0.1 + 0.6180339887498949 * b, 1.0) * 6.0;
  const int sector = static_cast<int>(h);
  const double frac = h - sector;
  const double rgb[6][3] = {{1, frac, 0}, {1 - frac, 1, 0}, {0, 1, frac}, {0, 1 - frac, 1}, {frac, 0, 1}, {1, 0, 1 - frac}};
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>(std::lround(255.0 * rgb[sector % 6][c]));
  return out;
}

void export_viewable(const RigArchive& rig, int frame, const fs::path& path) {
  if (frame < 0 || frame >= rig.frame_count()) throw IndexError("export frame " + std::to_string(frame) + " out of range");
  const Points surface = lbs_apply(rig.rest, rig.weights.values, rig.bones.frame(frame));
  const bool posed = rig.tree.size() > 0 && rig.poses.frames() == rig.frame_count();
  const Pose pose = posed ? rig.poses.pose(frame) : Pose::identity(rig.tree.size());
  Points samples = rig.skeleton.samples;
  Points joints = rig.tree.joints;
  if (posed) {
    if (samples.cols() > 0) {
      samples = skin_with_skeleton(samples, bind_vertices(samples, rig.tree), rig.tree, pose);
    }
    joints = joint_positions(rig.tree, pose);
  }

  const int n = static_cast<int>(surface.cols());
  const int m = static_cast<int>(samples.cols());
  const int jn = static_cast<int>(joints.cols());
  const auto tree_edges = rig.tree.edges();
  std::ofstream out = open_out(path);
  out << "ply\nformat ascii 1.0\ncomment kind: 0 surface point, 1 skeleton sample, 2 joint\n";
  out << "element vertex " << (n + m + jn) << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar kind\n";
  out << "element edge " << (rig.skeleton.edges.size() + tree_edges.size()) << "\n";
  out << "property int vertex1\nproperty int vertex2\nend_header\n";
  Writer w(out);
  auto point = [&](const Vec3& p, std::array<std::uint8_t, 3> c, int kind) {
    w.vec(p).integer(c[0]).integer(c[1]).integer(c[2]).integer(kind);
    w.end_line();
  };
  for (int i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    rig.weights.values.row(i).maxCoeff(&best);
    point(surface.col(i), bone_color(static_cast<int>(best)), 0);
  }
  for (int j = 0; j < m; ++j) point(samples.col(j), {128, 128, 128}, 1);
  for (int j = 0; j < jn; ++j) point(joints.col(j), {255, 255, 255}, 2);
  for (const auto& [a, b] : rig.skeleton.edges) {
    w.integer(n + a).integer(n + b);
    w.end_line();
  }
  for (const auto& [p, c] : tree_edges) {
    w.integer(n + m + p).integer(n + m + c);
    w.end_line();
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace skelebones
