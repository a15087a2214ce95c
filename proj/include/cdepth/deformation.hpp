#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "cdepth/grid.hpp"

namespace cdepth {

/// Trainable per-frame log-scale knot grid. The scale field applied to a depth
/// map is exp(log_scale) bilinearly upsampled to full resolution, so any finite
/// parameter values produce strictly positive scales.
template <typename S>
struct ScaleGridParams {
  Grid<S> log_scale;  // h x w knots, h >= 2 and w >= 2
  int frame_index = -1;
  bool frozen = false;

  ScaleGridParams() = default;
  ScaleGridParams(int h, int w, int frame = -1) : log_scale(h, w), frame_index(frame) {
    if (h < 2 || w < 2) throw std::invalid_argument("ScaleGridParams: grid must be >= 2x2");
  }
};

/// Knot grid size by video orientation: (8, 10) for landscape, (10, 8) for portrait.
inline std::pair<int, int> default_grid_size(int width, int height) {
  return width >= height ? std::make_pair(8, 10) : std::make_pair(10, 8);
}

namespace detail {

// Knots are corner-aligned: knot (0,0) sits on pixel (0,0) and knot
// (h-1, w-1) on pixel (H-1, W-1). Maps a pixel coordinate to (cell, fraction).
template <typename S>
inline void knot_coord(int pix, int n_pix, int n_knots, int& k0, S& frac) {
  if (n_pix <= 1 || n_knots <= 1) {
    k0 = 0;
    frac = S(0);
    return;
  }
  S u = S(pix) * S(n_knots - 1) / S(n_pix - 1);
  k0 = static_cast<int>(u);
  if (k0 > n_knots - 2) k0 = n_knots - 2;
  frac = u - S(k0);
}

}  // namespace detail

/// Continuous evaluation of the scale field at pixel coordinates (may be fractional).
template <typename S>
S eval_scale_at(const ScaleGridParams<S>& params, S y, S x, int out_height, int out_width) {
  const Grid<S>& l = params.log_scale;
  const int h = l.height(), w = l.width();
  S u = (out_width > 1) ? x * S(w - 1) / S(out_width - 1) : S(0);
  S v = (out_height > 1) ? y * S(h - 1) / S(out_height - 1) : S(0);
  int kx = std::min(static_cast<int>(u), w - 2);
  int ky = std::min(static_cast<int>(v), h - 2);
  if (kx < 0) kx = 0;
  if (ky < 0) ky = 0;
  const S fu = u - S(kx), fv = v - S(ky);
  const S e00 = std::exp(l.at(ky, kx)), e10 = std::exp(l.at(ky, kx + 1));
  const S e01 = std::exp(l.at(ky + 1, kx)), e11 = std::exp(l.at(ky + 1, kx + 1));
  const S top = e00 + (e10 - e00) * fu;
  const S bot = e01 + (e11 - e01) * fu;
  return top + (bot - top) * fv;
}

/// Scale map at resolution H x W: exp at the knots, then bilinear upsampling.
template <typename S>
Grid<S> upsample_scale(const ScaleGridParams<S>& params, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1)
    throw std::invalid_argument("upsample_scale: output size must be >= 1");
  const Grid<S>& l = params.log_scale;
  const int h = l.height(), w = l.width();
  Grid<S> exp_l(h, w);
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx) exp_l.at(ky, kx) = std::exp(l.at(ky, kx));

  Grid<S> out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    int ky;
    S fv;
    detail::knot_coord<S>(y, out_height, h, ky, fv);
    for (int x = 0; x < out_width; ++x) {
      int kx;
      S fu;
      detail::knot_coord<S>(x, out_width, w, kx, fu);
      const S top = exp_l.at(ky, kx) + (exp_l.at(ky, kx + 1) - exp_l.at(ky, kx)) * fu;
      const S bot = exp_l.at(ky + 1, kx) + (exp_l.at(ky + 1, kx + 1) - exp_l.at(ky + 1, kx)) * fu;
      out.at(y, x) = top + (bot - top) * fv;
    }
  }
  return out;
}

/// Elementwise product of the initial depth with a scale map. Invalid (<= 0)
/// depths stay invalid.
template <typename S>
Grid<S> apply_deformation(const Grid<S>& depth0, const Grid<S>& scale) {
  if (!depth0.same_shape(scale))
    throw std::invalid_argument("apply_deformation: shape mismatch");
  Grid<S> out(depth0.height(), depth0.width());
  for (int y = 0; y < depth0.height(); ++y)
    for (int x = 0; x < depth0.width(); ++x) {
      const S d = depth0.at(y, x);
      out.at(y, x) = d > S(0) ? d * scale.at(y, x) : d;
    }
  return out;
}

/// Exact adjoint of upsample_scale: distributes per-pixel scale gradients to
/// the knots with the bilinear weights, then multiplies by exp(l) per knot.
/// Frozen parameters yield a zero grid.
template <typename S>
Grid<S> pullback_gradient(const Grid<S>& dloss_dscale, const ScaleGridParams<S>& params) {
  const Grid<S>& l = params.log_scale;
  const int h = l.height(), w = l.width();
  Grid<S> grad(h, w);
  if (params.frozen) return grad;

  const int H = dloss_dscale.height(), W = dloss_dscale.width();
  for (int y = 0; y < H; ++y) {
    int ky;
    S fv;
    detail::knot_coord<S>(y, H, h, ky, fv);
    for (int x = 0; x < W; ++x) {
      const S g = dloss_dscale.at(y, x);
      if (g == S(0)) continue;
      int kx;
      S fu;
      detail::knot_coord<S>(x, W, w, kx, fu);
      grad.at(ky, kx) += g * (S(1) - fu) * (S(1) - fv);
      grad.at(ky, kx + 1) += g * fu * (S(1) - fv);
      grad.at(ky + 1, kx) += g * (S(1) - fu) * fv;
      grad.at(ky + 1, kx + 1) += g * fu * fv;
    }
  }
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx) grad.at(ky, kx) *= std::exp(l.at(ky, kx));
  return grad;
}

/// Directional derivative of upsample_scale along a knot perturbation, used to
/// cross-check the adjoint.
template <typename S>
Grid<S> scale_directional_derivative(const ScaleGridParams<S>& params, const Grid<S>& delta_l,
                                     int out_height, int out_width) {
  const Grid<S>& l = params.log_scale;
  const int h = l.height(), w = l.width();
  Grid<S> de(h, w);
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx)
      de.at(ky, kx) = std::exp(l.at(ky, kx)) * delta_l.at(ky, kx);

  Grid<S> out(out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    int ky;
    S fv;
    detail::knot_coord<S>(y, out_height, h, ky, fv);
    for (int x = 0; x < out_width; ++x) {
      int kx;
      S fu;
      detail::knot_coord<S>(x, out_width, w, kx, fu);
      const S top = de.at(ky, kx) + (de.at(ky, kx + 1) - de.at(ky, kx)) * fu;
      const S bot = de.at(ky + 1, kx) + (de.at(ky + 1, kx + 1) - de.at(ky + 1, kx)) * fu;
      out.at(y, x) = top + (bot - top) * fv;
    }
  }
  return out;
}

}  // namespace cdepth
