#include "skelebones/metrics.hpp"

#include "skelebones/errors.hpp"
#include "skelebones/pose_solver.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>

namespace skelebones {

namespace {

void check_shapes(const VertexSequence& pred, const VertexSequence& truth) {
  if (pred.frame_count() != truth.frame_count() || pred.vertex_count() != truth.vertex_count()) {
    throw ShapeError(fmt::format("sequence shapes differ: {} x {} vs {} x {}", pred.frame_count(),
                                 pred.vertex_count(), truth.frame_count(), truth.vertex_count()));
  }
  if (pred.frame_count() == 0 || pred.vertex_count() == 0) throw ShapeError("cannot evaluate empty sequences");
}

}  // namespace

std::vector<double> per_frame_rmse(const VertexSequence& pred, const VertexSequence& truth) {
  check_shapes(pred, truth);
  std::vector<double> out;
  out.reserve(pred.frame_count());
  for (int f = 0; f < pred.frame_count(); ++f) {
    out.push_back(std::sqrt((pred.frame(f) - truth.frame(f)).colwise().squaredNorm().mean()));
  }
  return out;
}

double sequence_rmse(const VertexSequence& pred, const VertexSequence& truth) {
  const auto frames = per_frame_rmse(pred, truth);
  double sum = 0.0;
  for (double r : frames) sum += r * r;
  return std::sqrt(sum / static_cast<double>(frames.size()));
}

EvalReport evaluate(const VertexSequence& pred, const VertexSequence& truth, const std::string& units) {
  EvalReport r;
  r.units = units;
  r.frames = pred.frame_count();
  r.vertices = pred.vertex_count();
  r.per_frame_rmse = per_frame_rmse(pred, truth);
  double sum = 0.0;
  for (double e : r.per_frame_rmse) sum += e * e;
  r.rmse = std::sqrt(sum / r.frames);
  double chamfer = 0.0;
  for (int f = 0; f < r.frames; ++f) chamfer += chamfer_distance(pred.frame(f), truth.frame(f));
  r.chamfer = chamfer / r.frames;
  return r;
}

std::string EvalReport::to_json() const {
  const nlohmann::json j = {{"units", units},   {"frames", frames},
                            {"vertices", vertices}, {"rmse", rmse},
                            {"per_frame_rmse", per_frame_rmse}, {"chamfer", chamfer}};
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::string out = fmt::format("frames {}  vertices {}\nrmse {:.9g} {}\nchamfer {:.9g} {}^2\n", frames, vertices,
                                rmse, units, chamfer, units);
  for (size_t f = 0; f < per_frame_rmse.size(); ++f) out += fmt::format("frame {} rmse {:.9g}\n", f, per_frame_rmse[f]);
  return out;
}

}  // namespace skelebones
