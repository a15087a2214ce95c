#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

namespace cdepth {

template <typename S>
struct Vec2 {
  S x{}, y{};
};

template <typename S>
struct Vec3 {
  S x{}, y{}, z{};

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(S s) const { return {x * s, y * s, z * s}; }
  S dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  S norm() const { return std::sqrt(dot(*this)); }
};

/// 3x3 matrix, row-major.
template <typename S>
struct Mat3 {
  S m[3][3]{};

  static Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = S(1);
    return r;
  }

  Vec3<S> operator*(const Vec3<S>& v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  /// Rᵀ·v without forming the transpose.
  Vec3<S> tmul(const Vec3<S>& v) const {
    return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
  }

  friend bool operator==(const Mat3& a, const Mat3& b) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (a.m[i][j] != b.m[i][j]) return false;
    return true;
  }
};

/// Pinhole intrinsics in pixels. Rescaling by s multiplies all four parameters by s.
template <typename S>
struct Intrinsics {
  S fx{}, fy{}, cx{}, cy{};
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > S(0)) || !(fy > S(0))) throw std::invalid_argument("Intrinsics: focal <= 0");
    if (!(cx > S(0)) || !(cx < S(width)) || !(cy > S(0)) || !(cy < S(height)))
      throw std::invalid_argument("Intrinsics: principal point outside image");
  }

  Intrinsics scaled(S s, int new_width, int new_height) const {
    return {fx * s, fy * s, cx * s, cy * s, new_width, new_height};
  }
};

/// Rigid transform, camera-from-world: X_cam = R·X_world + t.
template <typename S>
struct Pose {
  Mat3<S> rotation = Mat3<S>::identity();
  Vec3<S> translation{};

  Vec3<S> apply(const Vec3<S>& world) const { return rotation * world + translation; }
  Vec3<S> apply_inverse(const Vec3<S>& cam) const { return rotation.tmul(cam - translation); }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transposed();
    p.translation = rotation.tmul(translation) * S(-1);
    return p;
  }

  /// Camera center in world coordinates.
  Vec3<S> center() const { return rotation.tmul(translation) * S(-1); }

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation.x == b.translation.x &&
           a.translation.y == b.translation.y && a.translation.z == b.translation.z;
  }

  /// Max deviation of Rᵀ·R from identity, for orthonormality checks.
  S orthonormality_error() const {
    Mat3<S> g = rotation.transposed() * rotation;
    S e = S(0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) e = std::max(e, std::abs(g.m[i][j] - (i == j ? S(1) : S(0))));
    return e;
  }

  S rotation_determinant() const {
    const auto& r = rotation.m;
    return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
           r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
           r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  }
};

/// Unit quaternion (x, y, z, w) to rotation matrix.
template <typename S>
Mat3<S> quaternion_to_rotation(S qx, S qy, S qz, S qw) {
  Mat3<S> r;
  const S xx = qx * qx, yy = qy * qy, zz = qz * qz;
  const S xy = qx * qy, xz = qx * qz, yz = qy * qz;
  const S wx = qw * qx, wy = qw * qy, wz = qw * qz;
  r.m[0][0] = S(1) - S(2) * (yy + zz);
  r.m[0][1] = S(2) * (xy - wz);
  r.m[0][2] = S(2) * (xz + wy);
  r.m[1][0] = S(2) * (xy + wz);
  r.m[1][1] = S(1) - S(2) * (xx + zz);
  r.m[1][2] = S(2) * (yz - wx);
  r.m[2][0] = S(2) * (xz - wy);
  r.m[2][1] = S(2) * (yz + wx);
  r.m[2][2] = S(1) - S(2) * (xx + yy);
  return r;
}

/// Camera (view_b)-from-(view_a) transform. The identity flag is set exactly when
/// both poses compare bitwise equal, so self-warps stay numerically exact.
template <typename S>
struct RelativeTransform {
  Mat3<S> rotation = Mat3<S>::identity();
  Vec3<S> translation{};
  bool identity = false;
};

template <typename S>
RelativeTransform<S> relative_transform(const Pose<S>& from, const Pose<S>& to) {
  RelativeTransform<S> rel;
  if (from == to) {
    rel.identity = true;
    return rel;
  }
  rel.rotation = to.rotation * from.rotation.transposed();
  rel.translation = to.translation - rel.rotation * from.translation;
  return rel;
}

/// Pixel + depth to a 3D point in the camera frame. Depth must be positive.
template <typename S>
Vec3<S> unproject(const Vec2<S>& p, S depth, const Intrinsics<S>& intr) {
  if (!(depth > S(0))) throw std::invalid_argument("unproject: depth must be > 0");
  return {(p.x - intr.cx) * depth / intr.fx, (p.y - intr.cy) * depth / intr.fy, depth};
}

/// Camera-frame point to (pixel, z-depth). Points at or behind the camera
/// yield nullopt rather than an error.
template <typename S>
std::optional<std::pair<Vec2<S>, S>> project(const Vec3<S>& point, const Intrinsics<S>& intr) {
  if (!(point.z > S(0))) return std::nullopt;
  Vec2<S> p{intr.fx * point.x / point.z + intr.cx, intr.fy * point.y / point.z + intr.cy};
  return std::make_pair(p, point.z);
}

template <typename S>
struct Camera {
  Intrinsics<S> intr;
  Pose<S> pose;
};

}  // namespace cdepth
