#include "skelebones/pipeline.hpp"
#include "skelebones/rig_archive.hpp"
#include "skelebones/synthetic.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

using namespace skelebones;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("skelebones_rig_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const RigArchive& small_rig() {
  static const RigArchive rig = [] {
    SyntheticParams sp;
    sp.frames = 30;
    sp.vertices = 500;
    return build_rig_or_throw(generate_synthetic("hinge_chain", sp).sequence, PipelineConfig{});
  }();
  return rig;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("rig archive round trip is lossless") {
  TempDir dir;
  const RigArchive& rig = small_rig();
  CHECK(rig.check().empty());
  save_rig(rig, dir.path / "a.rig");
  const RigArchive back = load_rig(dir.path / "a.rig");
  CHECK(back == rig);
  save_rig(back, dir.path / "b.rig");
  CHECK(slurp(dir.path / "a.rig") == slurp(dir.path / "b.rig"));
}

TEST_CASE("corrupted archives are rejected") {
  TempDir dir;
  save_rig(small_rig(), dir.path / "a.rig");
  const std::string text = slurp(dir.path / "a.rig");

  std::ofstream(dir.path / "truncated.rig") << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_rig(dir.path / "truncated.rig"), CorruptArchive);

  std::ofstream(dir.path / "magic.rig") << "NOT-A-RIG 1\n" << text.substr(text.find('\n') + 1);
  CHECK_THROWS_AS(load_rig(dir.path / "magic.rig"), CorruptArchive);

  // break the canonical-frame identity of the bones
  RigArchive bad = small_rig();
  bad.bones.at(0, 0).translation = Vec3(1, 0, 0);
  CHECK_FALSE(bad.check().empty());
  CHECK_THROWS_AS(save_rig(bad, dir.path / "bad.rig"), CorruptArchive);

  const size_t bones = text.find("\nBONES ");
  REQUIRE(bones != std::string::npos);
  const size_t first = text.find('\n', bones + 1) + 1;
  const size_t end = text.find('\n', first);
  std::string tampered = text;
  tampered.replace(first, end - first, "1 0 0 0 1 0 0");
  std::ofstream(dir.path / "bad.rig") << tampered;
  CHECK_THROWS_AS(load_rig(dir.path / "bad.rig"), CorruptArchive);
}

TEST_CASE("poses and skeleton files round trip") {
  TempDir dir;
  const RigArchive& rig = small_rig();
  save_poses(rig.poses, dir.path / "q.poses");
  CHECK(load_poses(dir.path / "q.poses") == rig.poses);
  save_skeleton(rig.skeleton, dir.path / "s.skel");
  Points samples;
  std::vector<std::pair<int, int>> edges;
  load_skeleton(dir.path / "s.skel", samples, edges);
  CHECK(samples == rig.skeleton.samples);
  CHECK(edges == rig.skeleton.edges);
}

TEST_CASE("viewable export lists every element") {
  TempDir dir;
  const RigArchive& rig = small_rig();
  export_viewable(rig, 3, dir.path / "f.ply");
  const std::string ply = slurp(dir.path / "f.ply");
  const int vertices = rig.vertex_count() + rig.skeleton.size() + rig.joint_count();
  const int edges = static_cast<int>(rig.skeleton.edges.size()) + rig.joint_count() - 1;
  CHECK(ply.rfind("ply\nformat ascii 1.0\n", 0) == 0);
  CHECK(ply.find("element vertex " + std::to_string(vertices) + "\n") != std::string::npos);
  CHECK(ply.find("element edge " + std::to_string(edges) + "\n") != std::string::npos);
  CHECK_THROWS_AS(export_viewable(rig, rig.frame_count(), dir.path / "g.ply"), IndexError);
}

TEST_CASE("bone colors are deterministic and distinct") {
  std::set<std::array<std::uint8_t, 3>> seen;
  for (int b = 0; b < 50; ++b) {
    CHECK(bone_color(b) == bone_color(b));
    seen.insert(bone_color(b));
  }
  CHECK(seen.size() == 50);
}
