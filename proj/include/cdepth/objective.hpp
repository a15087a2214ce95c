#pragma once

#include <cmath>
#include <stdexcept>

#include "cdepth/deformation.hpp"
#include "cdepth/geometry.hpp"
#include "cdepth/grid.hpp"
#include "cdepth/warp.hpp"

namespace cdepth {

enum class FeatureMode { kRatio, kDot, kNone };

struct FeatureConfig {
  FeatureMode mode = FeatureMode::kRatio;
  double epsilon = 1e-6;   // stabilizer for the ratio denominator
  bool normalize = true;   // unit-normalize per pixel in dot mode
};

struct LossWeights {
  double photo = 1.0;
  double depth = 1.0;
  double feat = 1.0;
};

/// One frame's optimization inputs at working resolution.
template <typename S>
struct FrameData {
  Grid<S> image;     // H x W x 3, values in [0, 1]
  Grid<S> features;  // H x W x C, empty when the feature loss is off
  Grid<S> depth0;    // H x W initial depth, <= 0 marks invalid
  Camera<S> camera;
};

/// Loss terms (already weighted), the valid-pixel count, and the gradients
/// with respect to the two frames' log-scale knots.
template <typename S>
struct LossBundle {
  S photo{}, depth{}, feat{}, total{};
  long valid_count = 0;
  Grid<S> grad_i;  // h x w, zero when frame i is frozen
  Grid<S> grad_j;
  bool skipped = false;
};

namespace detail {

template <typename S>
inline S sgn(S v) {
  return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
}

template <typename S>
void require_nonnegative(const Grid<S>& features, const char* who) {
  for (std::size_t k = 0; k < features.size(); ++k)
    if (features.data()[k] < S(0))
      throw std::invalid_argument(std::string(who) + ": negative feature value");
}

}  // namespace detail

/// Mean absolute color difference over valid pixels, Lphoto. Also returns the
/// derivative w.r.t. each warped sample (zero at invalid pixels).
template <typename S>
std::pair<S, Grid<S>> photometric_loss(const Grid<S>& target_image, const WarpResult<S>& warp) {
  const int H = target_image.height(), W = target_image.width(), C = target_image.channels();
  Grid<S> grad(H, W, C);
  if (warp.valid_count == 0) return {S(0), grad};
  S sum = S(0);
  const S norm = S(1) / (S(C) * S(warp.valid_count));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!warp.valid.at(y, x)) continue;
      for (int c = 0; c < C; ++c) {
        const S r = target_image.at(y, x, c) - warp.warped.at(y, x, c);
        sum += std::abs(r);
        grad.at(y, x, c) = -detail::sgn(r) * norm;
      }
    }
  return {sum * norm, grad};
}

/// Mean absolute difference between the target depth and the pseudo depth,
/// Ldepth, with derivatives w.r.t. both.
template <typename S>
struct DepthLossResult {
  S value{};
  Grid<S> dvalue_dtarget;
  Grid<S> dvalue_dpseudo;
};

template <typename S>
DepthLossResult<S> depth_loss(const Grid<S>& target_depth, const WarpResult<S>& warp) {
  const int H = target_depth.height(), W = target_depth.width();
  DepthLossResult<S> out;
  out.dvalue_dtarget = Grid<S>(H, W);
  out.dvalue_dpseudo = Grid<S>(H, W);
  if (warp.valid_count == 0) return out;
  S sum = S(0);
  const S norm = S(1) / S(warp.valid_count);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!warp.valid.at(y, x)) continue;
      const S r = target_depth.at(y, x) - warp.pseudo_depth.at(y, x);
      sum += std::abs(r);
      const S s = detail::sgn(r) * norm;
      out.dvalue_dtarget.at(y, x) = s;
      out.dvalue_dpseudo.at(y, x) = -s;
    }
  out.value = sum * norm;
  return out;
}

/// Normalized-ratio feature distance, |Fi - Fw| / (|Fi + Fw| + eps), averaged
/// over channels and valid pixels. Requires nonnegative features.
template <typename S>
std::pair<S, Grid<S>> feature_loss_ratio(const Grid<S>& target_features, const WarpResult<S>& warp,
                                         const FeatureConfig& cfg) {
  detail::require_nonnegative(target_features, "feature_loss_ratio");
  detail::require_nonnegative(warp.warped, "feature_loss_ratio");
  const int H = target_features.height(), W = target_features.width();
  const int C = target_features.channels();
  Grid<S> grad(H, W, C);
  if (warp.valid_count == 0) return {S(0), grad};
  const S eps = S(cfg.epsilon);
  S sum = S(0);
  const S norm = S(1) / (S(C) * S(warp.valid_count));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!warp.valid.at(y, x)) continue;
      for (int c = 0; c < C; ++c) {
        const S a = target_features.at(y, x, c);
        const S v = warp.warped.at(y, x, c);
        const S den = std::abs(a + v) + eps;
        const S num = std::abs(a - v);
        sum += num / den;
        grad.at(y, x, c) =
            norm * (-detail::sgn(a - v) * den - num * detail::sgn(a + v)) / (den * den);
      }
    }
  return {sum * norm, grad};
}

/// Negative mean dot product of target and warped features; optionally both
/// vectors are unit-normalized per pixel first (cosine form).
template <typename S>
std::pair<S, Grid<S>> feature_loss_dot(const Grid<S>& target_features, const WarpResult<S>& warp,
                                       const FeatureConfig& cfg) {
  const int H = target_features.height(), W = target_features.width();
  const int C = target_features.channels();
  Grid<S> grad(H, W, C);
  if (warp.valid_count == 0) return {S(0), grad};
  S sum = S(0);
  const S norm = S(1) / S(warp.valid_count);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!warp.valid.at(y, x)) continue;
      if (cfg.normalize) {
        S nu2 = S(0), nv2 = S(0), uv = S(0);
        for (int c = 0; c < C; ++c) {
          const S u = target_features.at(y, x, c), v = warp.warped.at(y, x, c);
          nu2 += u * u;
          nv2 += v * v;
          uv += u * v;
        }
        if (nu2 == S(0) || nv2 == S(0)) continue;  // zero-norm pixels contribute nothing
        const S nu = std::sqrt(nu2), nv = std::sqrt(nv2);
        sum -= uv / (nu * nv);
        for (int c = 0; c < C; ++c) {
          const S u = target_features.at(y, x, c), v = warp.warped.at(y, x, c);
          grad.at(y, x, c) = -norm * (u - uv * v / nv2) / (nu * nv);
        }
      } else {
        for (int c = 0; c < C; ++c) {
          const S u = target_features.at(y, x, c);
          sum -= u * warp.warped.at(y, x, c);
          grad.at(y, x, c) = -norm * u;
        }
      }
    }
  return {sum * norm, grad};
}

/// Hand-rolled feature stack for runs without network feature files: grayscale,
/// absolute x/y gradients, and five absolute 3x3 filter responses, each box
/// smoothed. Deterministic and nonnegative, so it feeds the ratio loss.
template <typename S>
Grid<S> fallback_features(const Grid<S>& image) {
  const int H = image.height(), W = image.width();
  Grid<S> gray(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      gray.at(y, x) = S(0.299) * image.at(y, x, 0) + S(0.587) * image.at(y, x, 1) +
                      S(0.114) * image.at(y, x, 2);

  auto clamped = [&](int y, int x) -> S {
    y = y < 0 ? 0 : (y >= H ? H - 1 : y);
    x = x < 0 ? 0 : (x >= W ? W - 1 : x);
    return gray.at(y, x);
  };

  static const S kFilters[5][3][3] = {
      {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}},
      {{-2, -1, 0}, {-1, 0, 1}, {0, 1, 2}},
      {{0, -1, -2}, {1, 0, -1}, {2, 1, 0}},
      {{1, -2, 1}, {-2, 4, -2}, {1, -2, 1}},
      {{-1, -1, -1}, {-1, 8, -1}, {-1, -1, -1}},
  };

  const int C = 8;
  Grid<S> raw(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      raw.at(y, x, 0) = gray.at(y, x);
      raw.at(y, x, 1) = std::abs((clamped(y, x + 1) - clamped(y, x - 1)) * S(0.5));
      raw.at(y, x, 2) = std::abs((clamped(y + 1, x) - clamped(y - 1, x)) * S(0.5));
      for (int f = 0; f < 5; ++f) {
        S acc = S(0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += kFilters[f][dy + 1][dx + 1] * clamped(y + dy, x + dx);
        raw.at(y, x, 3 + f) = std::abs(acc);
      }
    }

  Grid<S> out(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        S acc = S(0);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::min(std::max(y + dy, 0), H - 1);
            const int xx = std::min(std::max(x + dx, 0), W - 1);
            acc += raw.at(yy, xx, c);
          }
        out.at(y, x, c) = acc / S(9);
      }
  return out;
}

/// Total loss for one frame pair and its gradients w.r.t. both knot grids.
/// Applies the deformation, reprojects frame j into frame i, evaluates the
/// three terms, and backpropagates through the sampling geometry and the
/// spline. Gradients for frozen frames are zero grids; a pair with no valid
/// pixels (or two frozen frames) is returned as skipped.
template <typename S>
LossBundle<S> pair_loss(const FrameData<S>& frame_i, const FrameData<S>& frame_j,
                        const ScaleGridParams<S>& params_i, const ScaleGridParams<S>& params_j,
                        const FeatureConfig& cfg, const LossWeights& weights = {}) {
  LossBundle<S> out;
  out.grad_i = Grid<S>(params_i.log_scale.height(), params_i.log_scale.width());
  out.grad_j = Grid<S>(params_j.log_scale.height(), params_j.log_scale.width());
  if (params_i.frozen && params_j.frozen) {
    out.skipped = true;
    return out;
  }

  const int H = frame_i.depth0.height(), W = frame_i.depth0.width();
  const int Cf = frame_i.features.channels();
  const bool use_feat = cfg.mode != FeatureMode::kNone && !frame_i.features.empty() &&
                        !frame_j.features.empty();
  if (use_feat && cfg.mode == FeatureMode::kRatio) {
    detail::require_nonnegative(frame_i.features, "pair_loss");
    detail::require_nonnegative(frame_j.features, "pair_loss");
  }

  const Grid<S> scale_i = upsample_scale(params_i, H, W);
  const Grid<S> depth_i = apply_deformation(frame_i.depth0, scale_i);
  const Grid<S> scale_j =
      upsample_scale(params_j, frame_j.depth0.height(), frame_j.depth0.width());
  const Grid<S> depth_j = apply_deformation(frame_j.depth0, scale_j);

  const RelativeTransform<S> rel =
      relative_transform(frame_i.camera.pose, frame_j.camera.pose);

  // Per-pixel accumulators, missing only the global 1/|valid| factor.
  Grid<S> acc_dd(H, W);                                       // d(total)/d(D_i(p))
  Grid<S> acc_dDj(frame_j.depth0.height(), frame_j.depth0.width());  // d(total)/d(D_j(s))

  S photo_sum = S(0), depth_sum = S(0), feat_sum = S(0);
  long valid_count = 0;
  const S wp = S(weights.photo), wd = S(weights.depth), wf = S(weights.feat);
  const S eps = S(cfg.epsilon);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto c = detail::trace_pixel(x, y, depth_i.at(y, x), rel, frame_i.camera.intr,
                                         frame_j.camera.intr, depth_j);
      if (!c.valid) continue;
      ++valid_count;
      S dd = S(0);  // accumulates d(per-pixel weighted loss)/d(D_i(p))

      for (int ch = 0; ch < 3; ++ch) {
        const S warped = detail::sample_at(frame_j.image, c, ch);
        const S r = frame_i.image.at(y, x, ch) - warped;
        photo_sum += std::abs(r);
        const S dl_dwarped = -detail::sgn(r) * wp / S(3);
        if (dl_dwarped != S(0)) dd += dl_dwarped * detail::sample_deriv_dd(frame_j.image, c, ch);
      }

      {
        const S r = depth_i.at(y, x) - c.pseudo;
        depth_sum += std::abs(r);
        const S s = detail::sgn(r) * wd;
        dd += s * (S(1) - c.dpd_dd);
        const S dl_ddj = -s * c.g;  // through the sampled source depth
        acc_dDj.at(c.y0, c.x0) += dl_ddj * c.w00;
        acc_dDj.at(c.y0, c.x0 + 1) += dl_ddj * c.w10;
        acc_dDj.at(c.y0 + 1, c.x0) += dl_ddj * c.w01;
        acc_dDj.at(c.y0 + 1, c.x0 + 1) += dl_ddj * c.w11;
      }

      if (use_feat) {
        if (cfg.mode == FeatureMode::kRatio) {
          for (int ch = 0; ch < Cf; ++ch) {
            const S a = frame_i.features.at(y, x, ch);
            const S v = detail::sample_at(frame_j.features, c, ch);
            const S den = std::abs(a + v) + eps;
            const S num = std::abs(a - v);
            feat_sum += num / den;
            const S dl_dv = (wf / S(Cf)) *
                            (-detail::sgn(a - v) * den - num * detail::sgn(a + v)) / (den * den);
            if (dl_dv != S(0)) dd += dl_dv * detail::sample_deriv_dd(frame_j.features, c, ch);
          }
        } else {
          S nu2 = S(0), nv2 = S(0), uv = S(0);
          for (int ch = 0; ch < Cf; ++ch) {
            const S u = frame_i.features.at(y, x, ch);
            const S v = detail::sample_at(frame_j.features, c, ch);
            nu2 += u * u;
            nv2 += v * v;
            uv += u * v;
          }
          if (cfg.normalize) {
            if (nu2 != S(0) && nv2 != S(0)) {
              const S nu = std::sqrt(nu2), nv = std::sqrt(nv2);
              feat_sum -= uv / (nu * nv);
              for (int ch = 0; ch < Cf; ++ch) {
                const S u = frame_i.features.at(y, x, ch);
                const S v = detail::sample_at(frame_j.features, c, ch);
                const S dl_dv = -wf * (u - uv * v / nv2) / (nu * nv);
                dd += dl_dv * detail::sample_deriv_dd(frame_j.features, c, ch);
              }
            }
          } else {
            feat_sum -= uv;
            for (int ch = 0; ch < Cf; ++ch) {
              const S u = frame_i.features.at(y, x, ch);
              dd -= wf * u * detail::sample_deriv_dd(frame_j.features, c, ch);
            }
          }
        }
      }

      acc_dd.at(y, x) = dd;
    }
  }

  out.valid_count = valid_count;
  if (valid_count == 0) {
    out.skipped = true;
    return out;
  }

  const S inv_n = S(1) / S(valid_count);
  out.photo = wp * photo_sum * inv_n / S(3);
  out.depth = wd * depth_sum * inv_n;
  if (use_feat)
    out.feat = cfg.mode == FeatureMode::kRatio ? wf * feat_sum * inv_n / S(Cf)
                                               : wf * feat_sum * inv_n;
  out.total = out.photo + out.depth + out.feat;

  if (!params_i.frozen) {
    Grid<S> dl_dscale_i(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const S d0 = frame_i.depth0.at(y, x);
        if (d0 > S(0)) dl_dscale_i.at(y, x) = acc_dd.at(y, x) * inv_n * d0;
      }
    out.grad_i = pullback_gradient(dl_dscale_i, params_i);
  }
  if (!params_j.frozen) {
    Grid<S> dl_dscale_j(frame_j.depth0.height(), frame_j.depth0.width());
    for (int y = 0; y < frame_j.depth0.height(); ++y)
      for (int x = 0; x < frame_j.depth0.width(); ++x) {
        const S d0 = frame_j.depth0.at(y, x);
        if (d0 > S(0)) dl_dscale_j.at(y, x) = acc_dDj.at(y, x) * inv_n * d0;
      }
    out.grad_j = pullback_gradient(dl_dscale_j, params_j);
  }
  return out;
}

}  // namespace cdepth
