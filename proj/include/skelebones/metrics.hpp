#pragma once

#include "skelebones/sequence.hpp"

#include <string>
#include <vector>

namespace skelebones {

/// Comparison of a predicted sequence against ground truth, in raw scene units.
struct EvalReport {
  std::string units = "unitless";
  int frames = 0;
  int vertices = 0;
  double rmse = 0.0;
  std::vector<double> per_frame_rmse;
  /// Mean over frames of the symmetric Chamfer distance (squared units).
  double chamfer = 0.0;

  std::string to_json() const;
  std::string to_text() const;
};

/// sqrt(mean over frames and vertices of |pred - truth|^2). Throws ShapeError.
double sequence_rmse(const VertexSequence& pred, const VertexSequence& truth);
std::vector<double> per_frame_rmse(const VertexSequence& pred, const VertexSequence& truth);

/// Throws ShapeError unless F and N agree.
EvalReport evaluate(const VertexSequence& pred, const VertexSequence& truth, const std::string& units = "unitless");

}  // namespace skelebones
