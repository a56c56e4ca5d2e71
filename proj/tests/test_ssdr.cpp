#include "skelebones/ssdr.hpp"
#include "skelebones/synthetic.hpp"

#include <doctest.h>

#include <random>

using namespace skelebones;

namespace {

double brute_rmse(const VertexSequence& seq, const SkinningMatrix& w, const BoneTrack& bones) {
  double sum = 0.0;
  long count = 0;
  for (int f = 0; f < seq.frame_count(); ++f) {
    for (int i = 0; i < seq.vertex_count(); ++i) {
      Vec3 x = Vec3::Zero();
      for (int b = 0; b < w.bones(); ++b) x += w(i, b) * bones.at(f, b).apply(Vec3(seq.frame(0).col(i)));
      sum += (x - seq.frame(f).col(i)).squaredNorm();
      ++count;
    }
  }
  return std::sqrt(sum / count);
}

}  // namespace

TEST_CASE("one_hot weights satisfy the skinning invariants") {
  const SkinningMatrix w = SkinningMatrix::one_hot({0, 2, 1, 2}, 3);
  CHECK(w.check().empty());
  CHECK(w(1, 2) == 1.0);
  SkinningMatrix bad = w;
  bad.values(0, 1) = 0.5;
  CHECK_FALSE(bad.check().empty());
  bad = w;
  bad.values(0, 0) = -0.1;
  bad.values(0, 1) = 1.1;
  CHECK_FALSE(bad.check().empty());
}

TEST_CASE("reconstruction_rmse matches a brute-force evaluation") {
  SyntheticParams sp;
  sp.frames = 12;
  sp.vertices = 200;
  const auto syn = generate_synthetic("soft_chain", sp);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SkinningMatrix w = syn.weights;
  for (int i = 0; i < w.vertices(); ++i) {
    const double a = u(rng);
    const int other = (i * 7) % w.bones();
    w.values.row(i) *= a;
    w.values(i, other) += 1.0 - a;
  }
  CHECK(reconstruction_rmse(syn.sequence, w, syn.bones) ==
        doctest::Approx(brute_rmse(syn.sequence, w, syn.bones)).epsilon(1e-12));
}

TEST_CASE("ssdr on a rigid body gives one exact bone") {
  SyntheticParams sp;
  sp.frames = 20;
  sp.vertices = 300;
  const auto seq = generate_synthetic("rigid_body", sp).sequence;
  const SsdrResult r = ssdr_solve(seq, lbg_cluster(seq));
  CHECK(r.bones.count() == 1);
  CHECK(r.rmse < 1e-9);
}

TEST_CASE("ssdr output obeys its invariants") {
  SyntheticParams sp;
  sp.frames = 30;
  sp.vertices = 500;
  const auto seq = generate_synthetic("soft_chain", sp).sequence;
  SsdrParams params;
  params.weights_per_vertex = 2;
  const SsdrResult r = ssdr_solve(seq, lbg_cluster(seq), params);
  CHECK(r.weights.check().empty());
  for (int i = 0; i < r.weights.vertices(); ++i) CHECK((r.weights.values.row(i).array() > 0.0).count() <= 2);
  for (int b = 0; b < r.bones.count(); ++b) {
    CHECK(r.bones.at(0, b).rotation == Rotation3::identity());
    CHECK(r.bones.at(0, b).translation == Vec3::Zero());
  }
  for (size_t i = 1; i < r.objective_history.size(); ++i) CHECK(r.objective_history[i] <= r.objective_history[i - 1]);
  CHECK(r.rmse == doctest::Approx(brute_rmse(seq, r.weights, r.bones)).epsilon(1e-9));
  CHECK(r.rmse_normalized == doctest::Approx(r.rmse / seq.bbox_diagonal()));
}

TEST_CASE("rigidity energy of a non-rigid sequence is positive") {
  SyntheticParams sp;
  sp.frames = 10;
  sp.vertices = 300;
  sp.jiggle = 0.3;
  const RigidityEnergy e = rigidity_energy(generate_synthetic("soft_chain", sp).sequence, 6);
  CHECK(e.arap_sum > 1e-6);
  CHECK(e.distance_sum > 0.0);
  CHECK(e.frames == 10);
  CHECK(e.arap_mean == doctest::Approx(e.arap_sum / (10.0 * e.pairs)));
}

TEST_CASE("rigidity energy preconditions") {
  const auto seq = generate_synthetic("rigid_body").sequence;
  CHECK_THROWS_AS(rigidity_energy(seq.slice(0, 1), 6), InsufficientFrames);
  CHECK_THROWS_AS(rigidity_energy(seq, 2), UsageError);
}
