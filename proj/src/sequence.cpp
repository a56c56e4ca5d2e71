#include "skelebones/sequence.hpp"

#include "skelebones/errors.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace skelebones {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'E', 'Q'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void write_le(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const fs::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated sequence file: " + path.string());
  }
  return to_little(value);
}

bool parse_double(std::string_view token, double& out) {
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc() && res.ptr == token.data() + token.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

}  // namespace

VertexSequence::VertexSequence(std::vector<Points> frames, std::vector<Face> faces)
    : frames_(std::move(frames)), faces_(std::move(faces)) {
  if (frames_.empty()) throw ShapeError("vertex sequence has no frames");
  const Eigen::Index n = frames_.front().cols();
  if (n == 0) throw ShapeError("vertex sequence has no vertices");
  for (size_t f = 0; f < frames_.size(); ++f) {
    if (frames_[f].cols() != n) {
      throw InconsistentTopology("frame " + std::to_string(f) + " has " + std::to_string(frames_[f].cols()) +
                                 " vertices, expected " + std::to_string(n));
    }
    if (!frames_[f].allFinite()) throw ShapeError("frame " + std::to_string(f) + " has non-finite coordinates");
  }
  for (const Face& face : faces_) {
    for (std::uint32_t v : face) {
      if (v >= n) throw ShapeError("face references vertex " + std::to_string(v) + " out of range");
    }
  }
  if (!(bbox_diagonal(0) > 0.0)) throw ShapeError("canonical frame has a zero bounding-box diagonal");
}

const Points& VertexSequence::frame(int f) const {
  if (f < 0 || f >= frame_count()) throw IndexError("frame index " + std::to_string(f) + " out of range");
  return frames_[f];
}

double VertexSequence::bbox_diagonal(int f) const {
  const Points& p = frame(f);
  return (p.rowwise().maxCoeff() - p.rowwise().minCoeff()).norm();
}

VertexSequence VertexSequence::slice(int begin, int end) const {
  if (begin < 0 || end > frame_count() || begin >= end) throw IndexError("invalid frame slice");
  return VertexSequence(std::vector<Points>(frames_.begin() + begin, frames_.begin() + end), faces_);
}

bool VertexSequence::operator==(const VertexSequence& rhs) const {
  if (frames_.size() != rhs.frames_.size() || faces_ != rhs.faces_) return false;
  for (size_t f = 0; f < frames_.size(); ++f) {
    if (frames_[f].cols() != rhs.frames_[f].cols() || frames_[f] != rhs.frames_[f]) return false;
  }
  return true;
}

void save_vseq(const VertexSequence& seq, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.frame_count()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.vertex_count()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.faces().size()));
  for (const Face& face : seq.faces()) {
    for (std::uint32_t v : face) write_le<std::uint32_t>(out, v);
  }
  for (const Points& frame : seq.frames()) {
    for (Eigen::Index i = 0; i < frame.cols(); ++i) {
      for (int c = 0; c < 3; ++c) write_le<double>(out, frame(c, i));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

VertexSequence load_vseq(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a .vseq file (bad magic): " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kVersion) throw IoError("unsupported .vseq version " + std::to_string(version));
  const auto frames = read_le<std::uint32_t>(in, path);
  const auto vertices = read_le<std::uint32_t>(in, path);
  const auto face_count = read_le<std::uint32_t>(in, path);

  std::vector<Face> faces(face_count);
  for (Face& face : faces) {
    for (std::uint32_t& v : face) v = read_le<std::uint32_t>(in, path);
  }
  std::vector<Points> data(frames, Points(3, vertices));
  for (std::uint32_t f = 0; f < frames; ++f) {
    for (std::uint32_t i = 0; i < vertices; ++i) {
      for (int c = 0; c < 3; ++c) {
        double value;
        if (!in.read(reinterpret_cast<char*>(&value), sizeof(double))) {
          throw IoError("truncated frame block in " + path.string(), static_cast<int>(f));
        }
        data[f](c, i) = to_little(value);
      }
    }
  }
  return VertexSequence(std::move(data), std::move(faces));
}

void read_obj(const fs::path& path, Points& vertices, std::vector<Face>& faces) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<Vec3> verts;
  faces.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "v") {
      Vec3 p;
      if (tokens.size() < 4 || !parse_double(tokens[1], p.x()) || !parse_double(tokens[2], p.y()) ||
          !parse_double(tokens[3], p.z())) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed vertex");
      }
      verts.push_back(p);
    } else if (tokens[0] == "f") {
      std::vector<std::uint32_t> poly;
      for (size_t t = 1; t < tokens.size(); ++t) {
        const std::string_view tok = tokens[t].substr(0, tokens[t].find('/'));
        long idx = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
        if (res.ec != std::errc() || idx == 0) {
          throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed face");
        }
        // negative indices are relative to the vertices read so far
        const long resolved = idx > 0 ? idx - 1 : static_cast<long>(verts.size()) + idx;
        if (resolved < 0) throw IoError(path.string() + ":" + std::to_string(line_no) + ": face index out of range");
        poly.push_back(static_cast<std::uint32_t>(resolved));
      }
      for (size_t k = 2; k < poly.size(); ++k) faces.push_back({poly[0], poly[k - 1], poly[k]});
    }
  }
  vertices.resize(3, static_cast<Eigen::Index>(verts.size()));
  for (size_t i = 0; i < verts.size(); ++i) vertices.col(i) = verts[i];
}

VertexSequence load_obj_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (files.empty()) throw IoError("no OBJ frames in " + dir.string());

  std::vector<Points> frames;
  std::vector<Face> faces;
  for (size_t f = 0; f < files.size(); ++f) {
    Points verts;
    std::vector<Face> frame_faces;
    try {
      read_obj(files[f], verts, frame_faces);
    } catch (const IoError& e) {
      throw IoError(std::string("frame ") + std::to_string(f) + ": " + e.what(), static_cast<int>(f));
    }
    if (!frames.empty() && verts.cols() != frames.front().cols()) {
      throw InconsistentTopology("frame " + std::to_string(f) + " (" + files[f].filename().string() + ") has " +
                                 std::to_string(verts.cols()) + " vertices, expected " +
                                 std::to_string(frames.front().cols()));
    }
    if (f == 0) faces = std::move(frame_faces);
    frames.push_back(std::move(verts));
  }
  return VertexSequence(std::move(frames), std::move(faces));
}

void save_obj_directory(const VertexSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  char name[32];
  for (int f = 0; f < seq.frame_count(); ++f) {
    std::snprintf(name, sizeof(name), "frame_%05d.obj", f);
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string(), f);
    char buf[64];
    const Points& p = seq.frame(f);
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
      out << 'v';
      for (int c = 0; c < 3; ++c) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), p(c, i));
        out << ' ' << std::string_view(buf, res.ptr - buf);
      }
      out << '\n';
    }
    for (const Face& face : seq.faces()) out << "f " << face[0] + 1 << ' ' << face[1] + 1 << ' ' << face[2] + 1 << '\n';
  }
}

VertexSequence load_sequence(const fs::path& path) {
  if (fs::is_directory(path)) return load_obj_directory(path);
  if (!fs::exists(path)) throw IoError("no such file or directory: " + path.string());
  return load_vseq(path);
}

void save_sequence(const VertexSequence& seq, const fs::path& path) {
  if (fs::is_directory(path) || !path.has_extension()) {
    save_obj_directory(seq, path);
  } else {
    save_vseq(seq, path);
  }
}

}  // namespace skelebones
