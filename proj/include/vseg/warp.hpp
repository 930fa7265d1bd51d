#pragma once

#include "vseg/types.hpp"

#include <cmath>

namespace vseg::warp {

/// Clamped bilinear lookup at continuous (x, y). Coordinates outside the
/// image rectangle read the nearest border value.
struct BilinearTaps {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double wx = 0.0, wy = 0.0;  // fractional weights toward x1 / y1
};

inline BilinearTaps bilinear_taps(int H, int W, double x, double y) {
  BilinearTaps t;
  if (W > 1) {
    int x0 = static_cast<int>(std::floor(x));
    x0 = x0 < 0 ? 0 : (x0 > W - 2 ? W - 2 : x0);
    double wx = x - x0;
    t.x0 = x0;
    t.x1 = x0 + 1;
    t.wx = wx < 0.0 ? 0.0 : (wx > 1.0 ? 1.0 : wx);
  }
  if (H > 1) {
    int y0 = static_cast<int>(std::floor(y));
    y0 = y0 < 0 ? 0 : (y0 > H - 2 ? H - 2 : y0);
    double wy = y - y0;
    t.y0 = y0;
    t.y1 = y0 + 1;
    t.wy = wy < 0.0 ? 0.0 : (wy > 1.0 ? 1.0 : wy);
  }
  return t;
}

template <typename S>
S sample_bilinear(const Grid<S>& g, S x, S y) {
  const auto t = bilinear_taps(static_cast<int>(g.rows()),
                               static_cast<int>(g.cols()),
                               static_cast<double>(x), static_cast<double>(y));
  const S wx = static_cast<S>(t.wx), wy = static_cast<S>(t.wy);
  return (S(1) - wy) * ((S(1) - wx) * g(t.y0, t.x0) + wx * g(t.y0, t.x1)) +
         wy * ((S(1) - wx) * g(t.y1, t.x0) + wx * g(t.y1, t.x1));
}

struct WarpResult {
  Planes image;
  BinaryMap valid;
};

/// valid(y,x) = 1 iff the sampling point (x+u, y+v) lies inside the image
/// rectangle [0,W-1]x[0,H-1] before any clamping.
BinaryMap valid_mask(const FlowField& flow);

/// out(y,x) = src sampled bilinearly at (x + u(y,x), y + v(y,x)).
Array2D backward_warp_plane(const Array2D& src, const FlowField& flow);
WarpResult backward_warp(const Planes& src, const FlowField& flow);

/// Nearest-neighbour variant for label maps; invalid pixels get `fill`.
LabelMap backward_warp_nearest(const LabelMap& src, const FlowField& flow,
                               std::uint8_t fill = kIgnoreIndex);

/// Adjoint of backward_warp_plane with the flow held fixed: scatters each
/// output cotangent onto the four source taps with the forward weights.
Array2D backward_warp_plane_adjoint(const Array2D& d_warped,
                                    const FlowField& flow);
Planes backward_warp_adjoint(const Planes& d_warped, const FlowField& flow);

/// Photometric reliability V = exp(-d), d = per-pixel mean over channels of
/// |frame_t - warped_frame_tk|. Range (0, 1]; identical frames give 1.
Array2D occlusion_mask(const Planes& frame_t, const Planes& warped_frame_tk);

/// Chain f_ab (a->b) with f_bc (b->c): out(p) = f_ab(p) + f_bc(p + f_ab(p)),
/// the second term read bilinearly.
FlowField compose_flows(const FlowField& f_ab, const FlowField& f_bc);

}  // namespace vseg::warp
