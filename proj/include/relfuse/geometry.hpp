#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace relfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Library-wide failure. The message is the stable error tag
/// ("degenerate direction", "insufficient samples", ...).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kEps = 1e-12;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Camera frame: x right, y down, z forward (optical axis). Objects are
// upright, so their rotations are yaw about the camera y axis and "up"
// is -y.
inline Vec3 yaw_axis() { return Vec3::UnitY(); }
inline Vec3 up_axis() { return -Vec3::UnitY(); }

inline Quat yaw_quaternion(double radians) {
    return Quat(Eigen::AngleAxisd(radians, yaw_axis()));
}

/// Yaw angle of a (yaw-only) rotation in (-pi, pi].
inline double yaw_of(const Quat& q) {
    const Vec3 front = q * Vec3::UnitZ();
    return std::atan2(front.x(), front.z());
}

/// Angle in radians of the relative rotation between two unit quaternions.
/// Uses 4·atan2(|p - q|, |p + q|) after aligning signs, which stays accurate
/// near 0 and near pi.
inline double geodesic_angle(const Quat& p, const Quat& q) {
    Eigen::Vector4d a = p.coeffs();
    Eigen::Vector4d b = q.coeffs();
    if (a.dot(b) < 0.0) b = -b;
    return 4.0 * std::atan2((a - b).norm(), (a + b).norm());
}

/// Expresses a camera-frame vector in the object frame of rotation R (Rᵀ v).
inline Vec3 frame_transform(const Quat& rotation, const Vec3& v) {
    return rotation.conjugate() * v;
}

inline Vec3 normalized_or_throw(const Vec3& v) {
    const double n = v.norm();
    if (!(n > kEps) || !std::isfinite(n)) throw Error("degenerate direction");
    return v / n;
}

}  // namespace relfuse
