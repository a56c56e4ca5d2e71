#pragma once

#include "skelebones/se3.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace skelebones {

using Face = std::array<std::uint32_t, 3>;

/// F frames of N corresponding 3D points, with optional triangles shared by
/// every frame. Validated on construction: equal N in every frame, finite
/// coordinates and a non-degenerate canonical bounding box.
class VertexSequence {
 public:
  VertexSequence() = default;
  explicit VertexSequence(std::vector<Points> frames, std::vector<Face> faces = {});

  int frame_count() const { return static_cast<int>(frames_.size()); }
  int vertex_count() const { return frames_.empty() ? 0 : static_cast<int>(frames_.front().cols()); }
  const Points& frame(int f) const;
  std::span<const Points> frames() const { return frames_; }
  const std::vector<Face>& faces() const { return faces_; }

  /// Bounding-box diagonal of frame `f` (the canonical frame by default).
  double bbox_diagonal(int f = 0) const;
  /// Frames [begin, end) as a new sequence.
  VertexSequence slice(int begin, int end) const;

  bool operator==(const VertexSequence& rhs) const;

 private:
  std::vector<Points> frames_;
  std::vector<Face> faces_;
};

/// Loads either a directory of per-frame OBJ files (sorted lexicographically
/// by file name) or a single `.vseq` binary file.
VertexSequence load_sequence(const std::filesystem::path& path);

/// Binary `.vseq` writer/reader (little-endian; layout in docs/formats.md).
void save_vseq(const VertexSequence& seq, const std::filesystem::path& path);
VertexSequence load_vseq(const std::filesystem::path& path);

VertexSequence load_obj_directory(const std::filesystem::path& dir);
/// Writes frame_00000.obj, frame_00001.obj, ... into `dir`.
void save_obj_directory(const VertexSequence& seq, const std::filesystem::path& dir);

/// Parses the vertex and face records of one OBJ file.
void read_obj(const std::filesystem::path& path, Points& vertices, std::vector<Face>& faces);

/// Saves as OBJ directory when `path` has no extension or is an existing
/// directory, otherwise as `.vseq`.
void save_sequence(const VertexSequence& seq, const std::filesystem::path& path);

}  // namespace skelebones
