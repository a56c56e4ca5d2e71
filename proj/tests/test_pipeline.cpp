#include "skelebones/metrics.hpp"
#include "skelebones/pipeline.hpp"
#include "skelebones/synthetic.hpp"

#include <doctest.h>

#include <json.hpp>

#include <random>

using namespace skelebones;

namespace {

int interior_count(const KinematicTree& t) {
  std::vector<int> degree(t.size(), 0);
  for (const auto& [p, c] : t.edges()) {
    ++degree[p];
    ++degree[c];
  }
  return static_cast<int>(std::count_if(degree.begin(), degree.end(), [](int d) { return d >= 2; }));
}

}  // namespace

TEST_CASE("config defaults") {
  const PipelineConfig c;
  CHECK(c.clustering.max_bones == 50);
  CHECK(c.tau == 0.3);
  CHECK(c.ssdr.weights_per_vertex == 4);
  CHECK(c.partmm.patch_size == 7);
  CHECK(c.partmm.k == 7);
  CHECK(c.partmm.levels == 5);
  CHECK(c.partmm.lambda_alpha == 0.7);
  CHECK(c.partmm.parts == 5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config JSON round trip and hashing") {
  PipelineConfig c;
  c.tau = 0.25;
  c.partmm.full_body = true;
  c.clustering.seed = 42;
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash() != PipelineConfig{}.hash());
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("partial config files keep defaults") {
  const PipelineConfig c = PipelineConfig::from_json(R"({"partmm": {"k": 3}, "tau": 0.4})");
  CHECK(c.partmm.k == 3);
  CHECK(c.tau == 0.4);
  CHECK(c.partmm.levels == 5);
}

TEST_CASE("bad configs are usage errors") {
  CHECK_THROWS_AS(PipelineConfig::from_json("{"), UsageError);
  CHECK_THROWS_AS(PipelineConfig::from_json(R"({"bogus": 1})"), UsageError);
  CHECK_THROWS_AS(PipelineConfig::from_json(R"({"partmm": {"kk": 1}})"), UsageError);
  CHECK_THROWS_AS(PipelineConfig::from_json(R"({"partmm": {"k": "seven"}})"), UsageError);
  CHECK_THROWS_AS(PipelineConfig::from_json(R"({"partmm": {"lambda_alpha": 2}})"), UsageError);
  PipelineConfig c;
  c.clustering.max_bones = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("rigging a rigid body gives one bone and a root-only tree") {
  SyntheticParams sp;
  sp.frames = 30;
  sp.vertices = 500;
  const RigResult r = build_rig(generate_synthetic("rigid_body", sp).sequence, PipelineConfig{});
  REQUIRE(r.ok());
  CHECK(r.rig.bone_count() == 1);
  CHECK(r.rig.joint_count() == 1);
  CHECK(r.rig.check().empty());
  CHECK(r.timings.size() == 5);
}

TEST_CASE("rigging a hinge chain") {
  SyntheticParams sp;
  sp.frames = 50;
  sp.vertices = 800;
  const RigResult r = build_rig(generate_synthetic("hinge_chain", sp).sequence, PipelineConfig{});
  REQUIRE(r.ok());
  CHECK(r.rig.bone_count() >= 1);
  CHECK(r.rig.bone_count() <= 3);
  CHECK(interior_count(r.rig.tree) == 1);
  CHECK(r.rig.poses.frames() == 50);
  CHECK(r.rig.config_hash == PipelineConfig{}.hash());
}

TEST_CASE("a failing stage leaves a named partial rig") {
  const VertexSequence one = generate_synthetic("hinge_chain").sequence.slice(0, 1);
  const RigResult r = build_rig(one, PipelineConfig{});
  CHECK_FALSE(r.ok());
  CHECK(r.rig.partial);
  CHECK(r.rig.failed_stage == "clustering");
  CHECK(r.rig.check().empty());
  try {
    build_rig_or_throw(one, PipelineConfig{});
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "clustering");
  }
}

TEST_CASE("metrics closed forms") {
  const VertexSequence a = generate_synthetic("y_branch").sequence.slice(0, 10);
  CHECK(sequence_rmse(a, a) == 0.0);
  const Vec3 t(0.3, -0.4, 1.2);
  std::vector<Points> shifted;
  for (int f = 0; f < a.frame_count(); ++f) shifted.push_back(a.frame(f).colwise() + t);
  const VertexSequence b(std::move(shifted));
  CHECK(sequence_rmse(b, a) == doctest::Approx(t.norm()).epsilon(1e-12));
  for (double e : per_frame_rmse(b, a)) CHECK(e == doctest::Approx(t.norm()).epsilon(1e-12));
  CHECK_THROWS_AS(sequence_rmse(a, a.slice(0, 5)), ShapeError);
}

TEST_CASE("metrics match a brute-force oracle") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_seq = [&] {
    std::vector<Points> fs;
    for (int f = 0; f < 4; ++f) {
      Points p(3, 30);
      for (int i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
      fs.push_back(p);
    }
    return VertexSequence(std::move(fs));
  };
  const VertexSequence a = random_seq();
  const VertexSequence b = random_seq();
  double sum = 0.0;
  for (int f = 0; f < 4; ++f) {
    for (int i = 0; i < 30; ++i) {
      for (int c = 0; c < 3; ++c) sum += std::pow(a.frame(f)(c, i) - b.frame(f)(c, i), 2);
    }
  }
  const EvalReport r = evaluate(a, b, "m");
  CHECK(std::abs(r.rmse - std::sqrt(sum / 120.0)) < 1e-12);
  CHECK(r.per_frame_rmse.size() == 4);
  CHECK(r.chamfer > 0.0);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["units"] == "m");
  CHECK(j["rmse"].get<double>() == r.rmse);
}

TEST_CASE("synthetic generators are deterministic and validated") {
  for (const auto& kind : synthetic_kinds()) {
    SyntheticParams sp;
    sp.frames = 5;
    sp.vertices = 200;
    const auto a = generate_synthetic(kind, sp);
    const auto b = generate_synthetic(kind, sp);
    CHECK(a.sequence == b.sequence);
    CHECK(a.tree.check().empty());
    // frame 0 is the rest pose for every generator but rigid_body translation starts at zero too
    CHECK((a.sequence.frame(0) - b.sequence.frame(0)).norm() == 0.0);
  }
  CHECK_THROWS_AS(generate_synthetic("octopus"), UsageError);
}

TEST_CASE("rigid generators are reproduced by their ground-truth LBS model") {
  for (const char* kind : {"rigid_body", "hinge_chain", "y_branch", "humanoid_stick"}) {
    SyntheticParams sp;
    sp.frames = 20;
    sp.vertices = 400;
    const auto syn = generate_synthetic(kind, sp);
    CHECK(reconstruction_rmse(syn.sequence, syn.weights, syn.bones) < 1e-12);
  }
  SyntheticParams sp;
  sp.frames = 50;
  sp.vertices = 400;
  CHECK(rigidity_energy(generate_synthetic("rigid_body", sp).sequence, 8).arap_sum < 1e-12);
  const auto soft = generate_synthetic("soft_chain", sp);
  CHECK(reconstruction_rmse(soft.sequence, soft.weights, soft.bones) > 1e-3);
}

TEST_CASE("hinge chain stage split holds later hinges straight") {
  SyntheticParams sp;
  sp.segments = 3;
  sp.frames = 40;
  sp.stage_split = 20;
  const auto syn = generate_synthetic("hinge_chain", sp);
  for (int f = 0; f < 20; ++f) CHECK(syn.poses.at(f, 3) == Rotation3::identity());
  CHECK(syn.poses.at(25, 3).angle() > 0.1);
  CHECK(syn.hinges.size() == 2);
}
