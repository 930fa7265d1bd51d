#include "vseg/warp.hpp"

namespace vseg::warp {
namespace {

void require_flow_shape(int H, int W, const FlowField& flow,
                        const char* what) {
  if (flow.height() != H || flow.width() != W)
    throw DimensionError(std::string(what) + ": flow shape mismatch");
}

}  // namespace

BinaryMap valid_mask(const FlowField& flow) {
  const int H = flow.height(), W = flow.width();
  BinaryMap valid(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = x + flow.u(y, x), sy = y + flow.v(y, x);
      valid(y, x) =
          (sx >= 0.0 && sx <= W - 1 && sy >= 0.0 && sy <= H - 1) ? 1 : 0;
    }
  return valid;
}

Array2D backward_warp_plane(const Array2D& src, const FlowField& flow) {
  const int H = static_cast<int>(src.rows()), W = static_cast<int>(src.cols());
  require_flow_shape(H, W, flow, "backward_warp_plane");
  Array2D out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      out(y, x) =
          sample_bilinear<Scalar>(src, x + flow.u(y, x), y + flow.v(y, x));
  return out;
}

WarpResult backward_warp(const Planes& src, const FlowField& flow) {
  if (src.channels() == 0)
    throw DimensionError("backward_warp: empty source");
  require_flow_shape(src.height(), src.width(), flow, "backward_warp");
  WarpResult res;
  res.image.ch.reserve(src.channels());
  for (int c = 0; c < src.channels(); ++c)
    res.image.ch.push_back(backward_warp_plane(src[c], flow));
  res.valid = valid_mask(flow);
  return res;
}

LabelMap backward_warp_nearest(const LabelMap& src, const FlowField& flow,
                               std::uint8_t fill) {
  const int H = static_cast<int>(src.rows()), W = static_cast<int>(src.cols());
  require_flow_shape(H, W, flow, "backward_warp_nearest");
  LabelMap out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double sx = x + flow.u(y, x), sy = y + flow.v(y, x);
      if (sx < 0.0 || sx > W - 1 || sy < 0.0 || sy > H - 1) {
        out(y, x) = fill;
        continue;
      }
      const int nx = static_cast<int>(std::llround(sx));
      const int ny = static_cast<int>(std::llround(sy));
      out(y, x) = src(ny, nx);
    }
  return out;
}

Array2D backward_warp_plane_adjoint(const Array2D& d_warped,
                                    const FlowField& flow) {
  const int H = static_cast<int>(d_warped.rows());
  const int W = static_cast<int>(d_warped.cols());
  require_flow_shape(H, W, flow, "backward_warp_plane_adjoint");
  Array2D d_src = Array2D::Zero(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto t =
          bilinear_taps(H, W, x + flow.u(y, x), y + flow.v(y, x));
      const double g = d_warped(y, x);
      d_src(t.y0, t.x0) += (1.0 - t.wy) * (1.0 - t.wx) * g;
      d_src(t.y0, t.x1) += (1.0 - t.wy) * t.wx * g;
      d_src(t.y1, t.x0) += t.wy * (1.0 - t.wx) * g;
      d_src(t.y1, t.x1) += t.wy * t.wx * g;
    }
  return d_src;
}

Planes backward_warp_adjoint(const Planes& d_warped, const FlowField& flow) {
  Planes out;
  out.ch.reserve(d_warped.channels());
  for (int c = 0; c < d_warped.channels(); ++c)
    out.ch.push_back(backward_warp_plane_adjoint(d_warped[c], flow));
  return out;
}

Array2D occlusion_mask(const Planes& frame_t, const Planes& warped_frame_tk) {
  if (!frame_t.same_shape(warped_frame_tk) || frame_t.channels() == 0)
    throw DimensionError("occlusion_mask: frame shape mismatch");
  Array2D d = Array2D::Zero(frame_t.height(), frame_t.width());
  for (int c = 0; c < frame_t.channels(); ++c)
    d += (frame_t[c] - warped_frame_tk[c]).abs();
  d /= frame_t.channels();
  return (-d).exp();
}

FlowField compose_flows(const FlowField& f_ab, const FlowField& f_bc) {
  const int H = f_ab.height(), W = f_ab.width();
  require_flow_shape(H, W, f_bc, "compose_flows");
  FlowField out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double mx = x + f_ab.u(y, x), my = y + f_ab.v(y, x);
      out.u(y, x) = f_ab.u(y, x) + sample_bilinear<Scalar>(f_bc.u, mx, my);
      out.v(y, x) = f_ab.v(y, x) + sample_bilinear<Scalar>(f_bc.v, mx, my);
    }
  return out;
}

}  // namespace vseg::warp
