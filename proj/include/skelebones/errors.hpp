#pragma once

#include <stdexcept>
#include <string>

namespace skelebones {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SKELEBONES_DEFINE_ERROR(Name) \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

SKELEBONES_DEFINE_ERROR(DegenerateConfiguration);
SKELEBONES_DEFINE_ERROR(ShapeError);
SKELEBONES_DEFINE_ERROR(InvalidWeights);
SKELEBONES_DEFINE_ERROR(InconsistentTopology);
SKELEBONES_DEFINE_ERROR(CorruptArchive);
SKELEBONES_DEFINE_ERROR(IndexError);
SKELEBONES_DEFINE_ERROR(ClusteringFailed);
SKELEBONES_DEFINE_ERROR(EmptyPointSet);
SKELEBONES_DEFINE_ERROR(InsufficientFrames);
SKELEBONES_DEFINE_ERROR(UsageError);

#undef SKELEBONES_DEFINE_ERROR

class IoError : public Error {
 public:
  IoError(const std::string& what, int frame = -1) : Error(what), frame_(frame) {}
  /// Offending frame index, or -1 when the failure is not tied to a frame.
  int frame() const { return frame_; }

 private:
  int frame_;
};

class DegenerateCluster : public Error {
 public:
  DegenerateCluster(const std::string& what, int cluster) : Error(what), cluster_(cluster) {}
  int cluster() const { return cluster_; }

 private:
  int cluster_;
};

class ContractionFailed : public Error {
 public:
  ContractionFailed(const std::string& what, int iteration) : Error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Raised by the rig pipeline; names the stage that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace skelebones
