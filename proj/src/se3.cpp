#include "skelebones/se3.hpp"

#include "skelebones/errors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace skelebones {

Rotation3::Rotation3(const Eigen::Quaterniond& q) : q_(q) {
  const double n2 = q_.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) {
    throw DegenerateConfiguration("rotation from zero or non-finite quaternion");
  }
  // Already-unit quaternions are kept bit-for-bit so serialized values round-trip.
  if (std::abs(n2 - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) {
    q_.coeffs() /= std::sqrt(n2);
  }
  if (q_.w() < 0.0) q_.coeffs() = -q_.coeffs();
}

Rotation3 Rotation3::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0) return {};
  return Rotation3(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis / n)));
}

Rotation3 Rotation3::from_rotation_vector(const Vec3& v) {
  const double angle = v.norm();
  if (angle < 1e-12) {
    // second-order expansion keeps the map smooth at the origin
    return Rotation3(Eigen::Quaterniond(1.0 - angle * angle / 8.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z()));
  }
  return from_axis_angle(v / angle, angle);
}

Rotation3 Rotation3::from_matrix(const Mat3& m) { return Rotation3(Eigen::Quaterniond(m)); }

Vec3 Rotation3::rotation_vector() const {
  const Vec3 v = q_.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q_.w());
  return v * (angle / s);
}

double Rotation3::angle() const { return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w())); }

Points RigidTransform::apply(const Points& xs) const {
  Points out = rotation.matrix() * xs;
  out.colwise() += translation;
  return out;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  return {rotation * rhs.rotation, rotation * rhs.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  const Rotation3 inv = rotation.inverse();
  return {inv, -(inv * translation)};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void TransformTrack::erase_column(int b) {
  std::vector<RigidTransform> next;
  next.reserve(static_cast<size_t>(frames_) * (count_ - 1));
  for (int f = 0; f < frames_; ++f) {
    for (int c = 0; c < count_; ++c) {
      if (c != b) next.push_back(at(f, c));
    }
  }
  data_ = std::move(next);
  --count_;
}

bool TransformTrack::operator==(const TransformTrack& rhs) const {
  if (frames_ != rhs.frames_ || count_ != rhs.count_) return false;
  for (size_t i = 0; i < data_.size(); ++i) {
    if (!(data_[i].rotation == rhs.data_[i].rotation) || data_[i].translation != rhs.data_[i].translation) {
      return false;
    }
  }
  return true;
}

double geodesic_distance(const Rotation3& a, const Rotation3& b) {
  // Raw product, no renormalization: identical inputs give an exact zero.
  const Eigen::Quaterniond d = a.quaternion().conjugate() * b.quaternion();
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

Rotation3 kabsch_fit(const Points& src, const Points& dst, std::span<const double> weights, Centering centering) {
  const Eigen::Index n = src.cols();
  if (dst.cols() != n) throw ShapeError("kabsch_fit: point counts differ");
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n) {
    throw ShapeError("kabsch_fit: weight count differs from point count");
  }
  auto weight = [&](Eigen::Index i) { return weights.empty() ? 1.0 : weights[i]; };

  Eigen::Index support = 0;
  double total = 0.0;
  Vec3 cs = Vec3::Zero();
  Vec3 cd = Vec3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weight(i);
    if (w < 0.0 || !std::isfinite(w)) throw InvalidWeights("kabsch_fit: negative or non-finite weight");
    if (w > 0.0) ++support;
    total += w;
    cs += w * src.col(i);
    cd += w * dst.col(i);
  }
  if (support < 3) throw DegenerateConfiguration("kabsch_fit: fewer than three weighted points");
  if (centering == Centering::Centroid) {
    cs /= total;
    cd /= total;
  } else {
    cs.setZero();
    cd.setZero();
  }

  Mat3 h = Mat3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weight(i);
    if (w > 0.0) h.noalias() += w * (src.col(i) - cs) * (dst.col(i) - cd).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateConfiguration("kabsch_fit: rank-deficient covariance");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return Rotation3::from_matrix(v * d * u.transpose());
}

RigidTransform fit_rigid(const Points& src, const Points& dst, std::span<const double> weights) {
  const Rotation3 r = kabsch_fit(src, dst, weights);
  Vec3 cs = Vec3::Zero();
  Vec3 cd = Vec3::Zero();
  double total = 0.0;
  for (Eigen::Index i = 0; i < src.cols(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w;
    cs += w * src.col(i);
    cd += w * dst.col(i);
  }
  cs /= total;
  cd /= total;
  return {r, cd - r * cs};
}

Points lbs_apply(const Points& rest, const Eigen::MatrixXd& weights, std::span<const RigidTransform> transforms) {
  if (weights.rows() != rest.cols()) throw ShapeError("lbs_apply: weight rows differ from vertex count");
  if (weights.cols() != static_cast<Eigen::Index>(transforms.size())) {
    throw ShapeError("lbs_apply: weight columns differ from transform count");
  }
  std::vector<Mat3> rot(transforms.size());
  for (size_t b = 0; b < transforms.size(); ++b) rot[b] = transforms[b].rotation.matrix();

  Points out = Points::Zero(3, rest.cols());
  for (Eigen::Index i = 0; i < rest.cols(); ++i) {
    const Vec3 x = rest.col(i);
    Vec3 acc = Vec3::Zero();
    for (Eigen::Index b = 0; b < weights.cols(); ++b) {
      const double w = weights(i, b);
      if (w != 0.0) acc += w * (rot[b] * x + transforms[b].translation);
    }
    out.col(i) = acc;
  }
  return out;
}

namespace {

void check_weights(size_t count, std::span<const double> weights, const char* who) {
  if (weights.size() != count) throw ShapeError(std::string(who) + ": weight count differs from input count");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw InvalidWeights(std::string(who) + ": negative or non-finite weight");
    sum += w;
  }
  if (!(sum > 0.0)) throw InvalidWeights(std::string(who) + ": weights sum to zero");
}

}  // namespace

Rotation3 weighted_rotation_average(std::span<const Rotation3> rotations, std::span<const double> weights) {
  check_weights(rotations.size(), weights, "weighted_rotation_average");
  size_t ref = 0;
  for (size_t i = 1; i < weights.size(); ++i) {
    if (weights[i] > weights[ref]) ref = i;
  }
  const Eigen::Vector4d q_ref = rotations[ref].quaternion().coeffs();
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (size_t i = 0; i < rotations.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const Eigen::Vector4d q = rotations[i].quaternion().coeffs();
    acc += (q.dot(q_ref) < 0.0 ? -weights[i] : weights[i]) * q;
  }
  // coeffs() order is (x, y, z, w)
  return Rotation3(Eigen::Quaterniond(acc(3), acc(0), acc(1), acc(2)));
}

RigidTransform blend_transforms(std::span<const RigidTransform> transforms, std::span<const double> weights) {
  check_weights(transforms.size(), weights, "blend_transforms");
  std::vector<Rotation3> rotations;
  rotations.reserve(transforms.size());
  Vec3 t = Vec3::Zero();
  double total = 0.0;
  for (size_t i = 0; i < transforms.size(); ++i) {
    rotations.push_back(transforms[i].rotation);
    t += weights[i] * transforms[i].translation;
    total += weights[i];
  }
  return {weighted_rotation_average(rotations, weights), t / total};
}

}  // namespace skelebones
