#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace skelebones {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Column-major 3xN block of points.
using Points = Eigen::Matrix3Xd;

/// Unit quaternion rotation, kept in the w >= 0 hemisphere.
class Rotation3 {
 public:
  Rotation3() = default;
  /// Normalizes `q` (unless it is already unit to within rounding) and
  /// canonicalizes the sign.
  explicit Rotation3(const Eigen::Quaterniond& q);
  Rotation3(double w, double x, double y, double z) : Rotation3(Eigen::Quaterniond(w, x, y, z)) {}

  static Rotation3 identity() { return {}; }
  static Rotation3 from_axis_angle(const Vec3& axis, double angle);
  /// Exponential map: axis * angle.
  static Rotation3 from_rotation_vector(const Vec3& v);
  static Rotation3 from_matrix(const Mat3& m);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  /// Logarithm map; angle in [0, pi].
  Vec3 rotation_vector() const;
  double angle() const;

  Rotation3 inverse() const { return Rotation3(q_.conjugate()); }
  Rotation3 operator*(const Rotation3& rhs) const { return Rotation3(q_ * rhs.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  bool operator==(const Rotation3& rhs) const { return q_.coeffs() == rhs.q_.coeffs(); }

 private:
  Eigen::Quaterniond q_{1.0, 0.0, 0.0, 0.0};
};

/// x -> R x + t
struct RigidTransform {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Points apply(const Points& xs) const;
  /// (*this) o rhs: apply rhs first.
  RigidTransform operator*(const RigidTransform& rhs) const;
  RigidTransform inverse() const;
  Eigen::Matrix4d matrix() const;
};

/// Dense frames x count grid of rigid transforms (bone tracks, cluster tracks).
class TransformTrack {
 public:
  TransformTrack() = default;
  TransformTrack(int frames, int count)
      : frames_(frames), count_(count), data_(static_cast<size_t>(frames) * count) {}

  int frames() const { return frames_; }
  int count() const { return count_; }
  RigidTransform& at(int f, int b) { return data_[static_cast<size_t>(f) * count_ + b]; }
  const RigidTransform& at(int f, int b) const { return data_[static_cast<size_t>(f) * count_ + b]; }
  std::span<RigidTransform> frame(int f) { return {data_.data() + static_cast<size_t>(f) * count_, static_cast<size_t>(count_)}; }
  std::span<const RigidTransform> frame(int f) const {
    return {data_.data() + static_cast<size_t>(f) * count_, static_cast<size_t>(count_)};
  }
  /// Drops column `b`, shifting later columns down.
  void erase_column(int b);

  bool operator==(const TransformTrack& rhs) const;

 private:
  int frames_ = 0;
  int count_ = 0;
  std::vector<RigidTransform> data_;
};

/// Angle of a^-1 b in [0, pi]. Inputs need not be normalized.
double geodesic_distance(const Rotation3& a, const Rotation3& b);

enum class Centering { Centroid, None };

/// Rotation minimizing sum_i w_i |dst_i - R src_i|^2, after removing the
/// (weighted) centroids unless `centering` is None. Throws
/// DegenerateConfiguration for fewer than three weighted points or a
/// covariance of rank < 2.
Rotation3 kabsch_fit(const Points& src, const Points& dst, std::span<const double> weights = {},
                     Centering centering = Centering::Centroid);

/// Rotation from kabsch_fit plus the translation mapping the weighted
/// centroid of `src` onto that of `dst`.
RigidTransform fit_rigid(const Points& src, const Points& dst, std::span<const double> weights = {});

/// Linear blend skinning of one frame. `weights` is N x B; returns 3 x N.
Points lbs_apply(const Points& rest, const Eigen::MatrixXd& weights, std::span<const RigidTransform> transforms);

/// Hemisphere-aligned normalized quaternion mean. Inputs are aligned to the
/// heaviest rotation (lowest index on ties), so global sign flips of the
/// inputs do not change the result.
Rotation3 weighted_rotation_average(std::span<const Rotation3> rotations, std::span<const double> weights);

/// Weighted blend of rigid transforms: rotations via weighted_rotation_average,
/// translations linearly.
RigidTransform blend_transforms(std::span<const RigidTransform> transforms, std::span<const double> weights);

}  // namespace skelebones
