#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "cdepth/geometry.hpp"
#include "cdepth/grid.hpp"

namespace cdepth {

/// Source values resampled into the target view, plus the pseudo depth map and
/// the validity mask. Invalid pixels hold zeros and are excluded from losses.
template <typename S>
struct WarpResult {
  Grid<S> warped;        // H x W x C
  Grid<S> pseudo_depth;  // H x W, target-frame z of the resampled source point
  Mask valid;            // H x W
  long valid_count = 0;
};

namespace detail {

// Everything the reprojection chain produces for one target pixel, including
// the partial derivatives needed for backpropagation through the geometry.
template <typename S>
struct PixelChain {
  bool valid = false;
  S qx{}, qy{};          // source-image sampling location
  S dqx_dd{}, dqy_dd{};  // d(q)/d(target depth)
  int x0 = 0, y0 = 0;    // bilinear support corner
  S w00{}, w10{}, w01{}, w11{};
  S dj{};                // source depth sampled at q
  S ddj_dqx{}, ddj_dqy{};
  S g{};                 // d(pseudo depth)/d(sampled source depth)
  S pseudo{};
  S dpd_dd{};            // d(pseudo depth)/d(target depth), via q
};

// Reproject target pixel (px, py) with depth d into the source view and sample
// the source depth. The identity transform takes an exact shortcut so that
// self-warps reproduce values bitwise.
template <typename S>
PixelChain<S> trace_pixel(int px, int py, S d, const RelativeTransform<S>& rel,
                          const Intrinsics<S>& target_intr, const Intrinsics<S>& source_intr,
                          const Grid<S>& source_depth) {
  PixelChain<S> c;
  if (!(d > S(0))) return c;

  if (rel.identity) {
    c.qx = S(px);
    c.qy = S(py);
    c.dqx_dd = c.dqy_dd = S(0);
  } else {
    const Vec3<S> ray{(S(px) - target_intr.cx) / target_intr.fx,
                      (S(py) - target_intr.cy) / target_intr.fy, S(1)};
    const Vec3<S> a = rel.rotation * ray;
    const Vec3<S> X = a * d + rel.translation;
    if (!(X.z > S(0))) return c;
    c.qx = source_intr.fx * X.x / X.z + source_intr.cx;
    c.qy = source_intr.fy * X.y / X.z + source_intr.cy;
    const S inv_z2 = S(1) / (X.z * X.z);
    c.dqx_dd = source_intr.fx * (a.x * X.z - X.x * a.z) * inv_z2;
    c.dqy_dd = source_intr.fy * (a.y * X.z - X.y * a.z) * inv_z2;
  }

  const int W = source_depth.width(), H = source_depth.height();
  if (!(c.qx >= S(0)) || !(c.qx < S(W - 1)) || !(c.qy >= S(0)) || !(c.qy < S(H - 1))) return c;
  c.x0 = static_cast<int>(c.qx);
  c.y0 = static_cast<int>(c.qy);
  const S fx = c.qx - S(c.x0), fy = c.qy - S(c.y0);
  c.w00 = (S(1) - fx) * (S(1) - fy);
  c.w10 = fx * (S(1) - fy);
  c.w01 = (S(1) - fx) * fy;
  c.w11 = fx * fy;

  const S d00 = source_depth.at(c.y0, c.x0);
  const S d10 = source_depth.at(c.y0, c.x0 + 1);
  const S d01 = source_depth.at(c.y0 + 1, c.x0);
  const S d11 = source_depth.at(c.y0 + 1, c.x0 + 1);
  if (!(d00 > S(0)) || !(d10 > S(0)) || !(d01 > S(0)) || !(d11 > S(0))) return c;
  c.dj = c.w00 * d00 + c.w10 * d10 + c.w01 * d01 + c.w11 * d11;
  c.ddj_dqx = (S(1) - fy) * (d10 - d00) + fy * (d11 - d01);
  c.ddj_dqy = (S(1) - fx) * (d01 - d00) + fx * (d11 - d10);

  // Reconstruct the sampled source point and express its z in the target
  // frame: pseudo = dj * g(q) + tz, with g built from the inverse rotation.
  const S rjx = (c.qx - source_intr.cx) / source_intr.fx;
  const S rjy = (c.qy - source_intr.cy) / source_intr.fy;
  const auto& R = rel.rotation.m;
  c.g = R[0][2] * rjx + R[1][2] * rjy + R[2][2];
  const S tz = -(R[0][2] * rel.translation.x + R[1][2] * rel.translation.y +
                 R[2][2] * rel.translation.z);
  c.pseudo = c.dj * c.g + tz;
  if (!(c.pseudo > S(0))) return c;

  const S dg_dqx = R[0][2] / source_intr.fx;
  const S dg_dqy = R[1][2] / source_intr.fy;
  const S dpd_dqx = c.ddj_dqx * c.g + c.dj * dg_dqx;
  const S dpd_dqy = c.ddj_dqy * c.g + c.dj * dg_dqy;
  c.dpd_dd = dpd_dqx * c.dqx_dd + dpd_dqy * c.dqy_dd;

  c.valid = true;
  return c;
}

template <typename S>
inline S sample_at(const Grid<S>& values, const PixelChain<S>& c, int ch) {
  return c.w00 * values.at(c.y0, c.x0, ch) + c.w10 * values.at(c.y0, c.x0 + 1, ch) +
         c.w01 * values.at(c.y0 + 1, c.x0, ch) + c.w11 * values.at(c.y0 + 1, c.x0 + 1, ch);
}

// Derivative of the sampled value w.r.t. the target depth, via the sampling point.
template <typename S>
inline S sample_deriv_dd(const Grid<S>& values, const PixelChain<S>& c, int ch) {
  const S fx = c.qx - S(c.x0), fy = c.qy - S(c.y0);
  const S v00 = values.at(c.y0, c.x0, ch), v10 = values.at(c.y0, c.x0 + 1, ch);
  const S v01 = values.at(c.y0 + 1, c.x0, ch), v11 = values.at(c.y0 + 1, c.x0 + 1, ch);
  const S dv_dqx = (S(1) - fy) * (v10 - v00) + fy * (v11 - v01);
  const S dv_dqy = (S(1) - fx) * (v01 - v00) + fx * (v11 - v10);
  return dv_dqx * c.dqx_dd + dv_dqy * c.dqy_dd;
}

}  // namespace detail

/// Resample source values and depth into the target view through the target's
/// depth map. A pixel is valid when the sampling point lies inside the source,
/// all four support pixels carry positive depth, and the depth chain stays in
/// front of both cameras. Never fails; a fully invalid result means the pair
/// carries no constraint.
template <typename S>
WarpResult<S> backward_warp(const Grid<S>& target_depth, const Camera<S>& target_cam,
                            const Grid<S>& source_values, const Grid<S>& source_depth,
                            const Camera<S>& source_cam) {
  const int H = target_depth.height(), W = target_depth.width();
  const int C = source_values.channels();
  WarpResult<S> out;
  out.warped = Grid<S>(H, W, C);
  out.pseudo_depth = Grid<S>(H, W);
  out.valid = Mask(H, W);

  const RelativeTransform<S> rel = relative_transform(target_cam.pose, source_cam.pose);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto c = detail::trace_pixel(x, y, target_depth.at(y, x), rel, target_cam.intr,
                                         source_cam.intr, source_depth);
      if (!c.valid) continue;
      for (int ch = 0; ch < C; ++ch) out.warped.at(y, x, ch) = detail::sample_at(source_values, c, ch);
      out.pseudo_depth.at(y, x) = c.pseudo;
      out.valid.at(y, x) = 1;
      ++out.valid_count;
    }
  }
  return out;
}

/// Per-pixel derivatives of one reprojection: how the warped values and the
/// pseudo depth respond to the target depth, and how the pseudo depth responds
/// to the four source support depths (weight * dpseudo_dsource each).
/// Everything is zero at invalid pixels.
template <typename S>
struct WarpJacobians {
  Grid<S> dwarped_dtarget;   // H x W x C
  Grid<S> dpseudo_dtarget;   // H x W
  Grid<S> dpseudo_dsource;   // H x W, common factor; per-support = weight * this
  Grid<S> support_weight;    // H x W x 4, order (x0,y0),(x0+1,y0),(x0,y0+1),(x0+1,y0+1)
  Grid<std::int32_t> support_x;  // H x W
  Grid<std::int32_t> support_y;  // H x W
  Mask valid;                    // H x W
};

template <typename S>
WarpJacobians<S> backward_warp_jacobians(const Grid<S>& target_depth, const Camera<S>& target_cam,
                                         const Grid<S>& source_values,
                                         const Grid<S>& source_depth,
                                         const Camera<S>& source_cam) {
  const int H = target_depth.height(), W = target_depth.width();
  const int C = source_values.channels();
  WarpJacobians<S> out;
  out.dwarped_dtarget = Grid<S>(H, W, C);
  out.dpseudo_dtarget = Grid<S>(H, W);
  out.dpseudo_dsource = Grid<S>(H, W);
  out.support_weight = Grid<S>(H, W, 4);
  out.support_x = Grid<std::int32_t>(H, W);
  out.support_y = Grid<std::int32_t>(H, W);
  out.valid = Mask(H, W);

  const RelativeTransform<S> rel = relative_transform(target_cam.pose, source_cam.pose);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto c = detail::trace_pixel(x, y, target_depth.at(y, x), rel, target_cam.intr,
                                         source_cam.intr, source_depth);
      if (!c.valid) continue;
      for (int ch = 0; ch < C; ++ch)
        out.dwarped_dtarget.at(y, x, ch) = detail::sample_deriv_dd(source_values, c, ch);
      out.dpseudo_dtarget.at(y, x) = c.dpd_dd;
      out.dpseudo_dsource.at(y, x) = c.g;
      out.support_weight.at(y, x, 0) = c.w00;
      out.support_weight.at(y, x, 1) = c.w10;
      out.support_weight.at(y, x, 2) = c.w01;
      out.support_weight.at(y, x, 3) = c.w11;
      out.support_x.at(y, x) = c.x0;
      out.support_y.at(y, x) = c.y0;
      out.valid.at(y, x) = 1;
    }
  }
  return out;
}

/// Splat of a source depth map into the target view: each valid source pixel
/// is transformed and written to the nearest target pixel, keeping the nearest
/// z on collisions. Untouched pixels stay 0 (invalid).
template <typename S>
Grid<S> forward_splat_depth(const Grid<S>& source_depth, const Camera<S>& source_cam,
                            const Camera<S>& target_cam, int target_height, int target_width) {
  Grid<S> out(target_height, target_width);
  const RelativeTransform<S> rel = relative_transform(source_cam.pose, target_cam.pose);
  const int H = source_depth.height(), W = source_depth.width();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const S d = source_depth.at(y, x);
      if (!(d > S(0))) continue;
      S z, qx, qy;
      if (rel.identity) {
        z = d;
        qx = S(x);
        qy = S(y);
      } else {
        const Vec3<S> ray{(S(x) - source_cam.intr.cx) / source_cam.intr.fx,
                          (S(y) - source_cam.intr.cy) / source_cam.intr.fy, S(1)};
        const Vec3<S> X = rel.rotation * ray * d + rel.translation;
        if (!(X.z > S(0))) continue;
        z = X.z;
        qx = target_cam.intr.fx * X.x / X.z + target_cam.intr.cx;
        qy = target_cam.intr.fy * X.y / X.z + target_cam.intr.cy;
      }
      const int tx = static_cast<int>(std::lround(static_cast<double>(qx)));
      const int ty = static_cast<int>(std::lround(static_cast<double>(qy)));
      if (!out.contains(ty, tx)) continue;
      S& slot = out.at(ty, tx);
      if (slot <= S(0) || z < slot) slot = z;
    }
  }
  return out;
}

}  // namespace cdepth
