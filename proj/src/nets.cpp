#include "vseg/nets.hpp"
#include "vseg/warp.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace vseg::nets {

using nlohmann::json;

FeatureMap from_planes(const Planes& p) {
  FeatureMap f(p.channels(), p.height(), p.width());
  for (int c = 0; c < p.channels(); ++c)
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) f.at(c, y, x) = p[c](y, x);
  return f;
}

Planes to_planes(const FeatureMap& f) {
  Planes p(f.channels(), f.height, f.width);
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) p[c](y, x) = f.at(c, y, x);
  return p;
}

Eigen::MatrixXd im2col(const FeatureMap& x, int k, int stride, int pad,
                       int& out_h, int& out_w) {
  const int C = x.channels(), H = x.height, W = x.width;
  out_h = (H + 2 * pad - k) / stride + 1;
  out_w = (W + 2 * pad - k) / stride + 1;
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(C * k * k, out_h * out_w);
  for (int yo = 0; yo < out_h; ++yo)
    for (int xo = 0; xo < out_w; ++xo) {
      const int po = yo * out_w + xo;
      for (int ky = 0; ky < k; ++ky) {
        const int yi = yo * stride - pad + ky;
        if (yi < 0 || yi >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xi = xo * stride - pad + kx;
          if (xi < 0 || xi >= W) continue;
          for (int c = 0; c < C; ++c)
            col((c * k + ky) * k + kx, po) = x.data(c, yi * W + xi);
        }
      }
    }
  return col;
}

FeatureMap col2im(const Eigen::MatrixXd& dcol, int channels, int h, int w,
                  int k, int stride, int pad) {
  const int out_h = (h + 2 * pad - k) / stride + 1;
  const int out_w = (w + 2 * pad - k) / stride + 1;
  FeatureMap dx(channels, h, w);
  for (int yo = 0; yo < out_h; ++yo)
    for (int xo = 0; xo < out_w; ++xo) {
      const int po = yo * out_w + xo;
      for (int ky = 0; ky < k; ++ky) {
        const int yi = yo * stride - pad + ky;
        if (yi < 0 || yi >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xi = xo * stride - pad + kx;
          if (xi < 0 || xi >= w) continue;
          for (int c = 0; c < channels; ++c)
            dx.data(c, yi * w + xi) += dcol((c * k + ky) * k + kx, po);
        }
      }
    }
  return dx;
}

FeatureMap avg_pool2(const FeatureMap& x, int fy, int fx) {
  if (fy < 1 || fx < 1 || x.height % fy || x.width % fx)
    throw DimensionError("avg_pool: dims not divisible by factor");
  const int Ho = x.height / fy, Wo = x.width / fx;
  FeatureMap out(x.channels(), Ho, Wo);
  const double inv = 1.0 / (fy * fx);
  for (int c = 0; c < x.channels(); ++c)
    for (int yo = 0; yo < Ho; ++yo)
      for (int xo = 0; xo < Wo; ++xo) {
        double s = 0;
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx)
            s += x.at(c, yo * fy + dy, xo * fx + dx);
        out.at(c, yo, xo) = s * inv;
      }
  return out;
}

FeatureMap avg_pool2_backward(const FeatureMap& dy, int fy, int fx) {
  FeatureMap dx(dy.channels(), dy.height * fy, dy.width * fx);
  const double inv = 1.0 / (fy * fx);
  for (int c = 0; c < dy.channels(); ++c)
    for (int yo = 0; yo < dy.height; ++yo)
      for (int xo = 0; xo < dy.width; ++xo) {
        const double g = dy.at(c, yo, xo) * inv;
        for (int dyy = 0; dyy < fy; ++dyy)
          for (int dxx = 0; dxx < fx; ++dxx)
            dx.at(c, yo * fy + dyy, xo * fx + dxx) = g;
      }
  return dx;
}

FeatureMap avg_pool(const FeatureMap& x, int factor) {
  return avg_pool2(x, factor, factor);
}

FeatureMap avg_pool_backward(const FeatureMap& dy, int factor) {
  return avg_pool2_backward(dy, factor, factor);
}

FeatureMap resize_bilinear(const FeatureMap& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw DimensionError("resize_bilinear: bad target size");
  FeatureMap out(x.channels(), out_h, out_w);
  const double sy = static_cast<double>(x.height) / out_h;
  const double sx = static_cast<double>(x.width) / out_w;
  for (int yo = 0; yo < out_h; ++yo)
    for (int xo = 0; xo < out_w; ++xo) {
      const auto t = warp::bilinear_taps(x.height, x.width,
                                         (xo + 0.5) * sx - 0.5,
                                         (yo + 0.5) * sy - 0.5);
      for (int c = 0; c < x.channels(); ++c)
        out.at(c, yo, xo) =
            (1 - t.wy) * ((1 - t.wx) * x.at(c, t.y0, t.x0) +
                          t.wx * x.at(c, t.y0, t.x1)) +
            t.wy * ((1 - t.wx) * x.at(c, t.y1, t.x0) +
                    t.wx * x.at(c, t.y1, t.x1));
    }
  return out;
}

FeatureMap upsample2x(const FeatureMap& x) {
  return resize_bilinear(x, 2 * x.height, 2 * x.width);
}

FeatureMap upsample2x_adjoint(const FeatureMap& dy) {
  if (dy.height % 2 || dy.width % 2)
    throw DimensionError("upsample2x_adjoint: odd input dims");
  const int H = dy.height / 2, W = dy.width / 2;
  FeatureMap dx(dy.channels(), H, W);
  for (int yo = 0; yo < dy.height; ++yo)
    for (int xo = 0; xo < dy.width; ++xo) {
      const auto t =
          warp::bilinear_taps(H, W, 0.5 * xo - 0.25, 0.5 * yo - 0.25);
      for (int c = 0; c < dy.channels(); ++c) {
        const double g = dy.at(c, yo, xo);
        dx.at(c, t.y0, t.x0) += (1 - t.wy) * (1 - t.wx) * g;
        dx.at(c, t.y0, t.x1) += (1 - t.wy) * t.wx * g;
        dx.at(c, t.y1, t.x0) += t.wy * (1 - t.wx) * g;
        dx.at(c, t.y1, t.x1) += t.wy * t.wx * g;
      }
    }
  return dx;
}

FeatureMap softmax(const FeatureMap& logits) {
  FeatureMap q = logits;
  for (int p = 0; p < q.pixels(); ++p) {
    auto col = q.data.col(p);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
  return q;
}

FeatureMap softmax_backward(const FeatureMap& q, const FeatureMap& dq) {
  FeatureMap dz = q;
  for (int p = 0; p < q.pixels(); ++p) {
    const double dot = q.data.col(p).dot(dq.data.col(p));
    dz.data.col(p) = (q.data.col(p).array() *
                      (dq.data.col(p).array() - dot))
                         .matrix();
  }
  return dz;
}

FeatureMap hflip(const FeatureMap& x) {
  FeatureMap out(x.channels(), x.height, x.width);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx)
        out.at(c, y, xx) = x.at(c, y, x.width - 1 - xx);
  return out;
}

// ---- Conv2d ----

Conv2d::Conv2d(int ci, int co, int k, int s, int p, std::mt19937_64& eng)
    : in_ch(ci), out_ch(co), ksize(k), stride(s), pad(p) {
  const int fan_in = ci * k * k;
  std::normal_distribution<double> init(0.0, std::sqrt(2.0 / fan_in));
  W.resize(co, fan_in);
  for (int r = 0; r < W.rows(); ++r)
    for (int c = 0; c < W.cols(); ++c) W(r, c) = init(eng);
  b = Eigen::MatrixXd::Zero(co, 1);
  dW = Eigen::MatrixXd::Zero(W.rows(), W.cols());
  db = Eigen::MatrixXd::Zero(co, 1);
}

FeatureMap Conv2d::forward(const FeatureMap& x) {
  if (x.channels() != in_ch) throw DimensionError("conv: channel mismatch");
  in_h_ = x.height;
  in_w_ = x.width;
  int ho, wo;
  col_ = im2col(x, ksize, stride, pad, ho, wo);
  FeatureMap y(out_ch, ho, wo);
  y.data = W * col_;
  y.data.colwise() += b.col(0);
  return y;
}

FeatureMap Conv2d::apply(const FeatureMap& x) const {
  if (x.channels() != in_ch) throw DimensionError("conv: channel mismatch");
  int ho, wo;
  const Eigen::MatrixXd col = im2col(x, ksize, stride, pad, ho, wo);
  FeatureMap y(out_ch, ho, wo);
  y.data = W * col;
  y.data.colwise() += b.col(0);
  return y;
}

FeatureMap Conv2d::backward(const FeatureMap& dy) {
  dW += dy.data * col_.transpose();
  db.col(0) += dy.data.rowwise().sum();
  return col2im(W.transpose() * dy.data, in_ch, in_h_, in_w_, ksize, stride,
                pad);
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".W", W, dW);
  fn(prefix + ".b", b, db);
}

// ---- RMSNorm ----

RMSNorm::RMSNorm(int channels) {
  g = Eigen::MatrixXd::Ones(channels, 1);
  b = Eigen::MatrixXd::Zero(channels, 1);
  dg = Eigen::MatrixXd::Zero(channels, 1);
  db = Eigen::MatrixXd::Zero(channels, 1);
}

FeatureMap RMSNorm::forward(const FeatureMap& x) {
  x_ = x.data;
  inv_r_ = (x.data.array().square().colwise().mean() + eps)
               .sqrt()
               .inverse()
               .matrix();
  FeatureMap y = x;
  y.data = (x.data.array().rowwise() * inv_r_.array()).colwise() *
           g.col(0).array();
  y.data.colwise() += b.col(0);
  return y;
}

FeatureMap RMSNorm::apply(const FeatureMap& x) const {
  Eigen::RowVectorXd inv_r = (x.data.array().square().colwise().mean() + eps)
                                 .sqrt()
                                 .inverse()
                                 .matrix();
  FeatureMap y = x;
  y.data = (x.data.array().rowwise() * inv_r.array()).colwise() *
           g.col(0).array();
  y.data.colwise() += b.col(0);
  return y;
}

FeatureMap RMSNorm::backward(const FeatureMap& dy) {
  const int C = static_cast<int>(x_.rows());
  const Eigen::ArrayXXd xh = x_.array().rowwise() * inv_r_.array();
  dg.col(0) += (dy.data.array() * xh).rowwise().sum().matrix();
  db.col(0) += dy.data.rowwise().sum();
  // dx = g*dy/r - x * sum_c(g_c dy_c x_c) / (C r^3)
  const Eigen::ArrayXXd gdy = dy.data.array().colwise() * g.col(0).array();
  const Eigen::RowVectorXd mix =
      (gdy * x_.array()).colwise().sum().matrix() / C;
  FeatureMap dx = dy;
  dx.data = (gdy.rowwise() * inv_r_.array() -
             (x_.array().rowwise() *
              (mix.array() * inv_r_.array().cube()).array()))
                .matrix();
  return dx;
}

void RMSNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".g", g, dg);
  fn(prefix + ".b", b, db);
}

// ---- Linear ----

Linear::Linear(int d_in, int d_out, std::mt19937_64& eng) {
  std::normal_distribution<double> init(0.0, std::sqrt(1.0 / d_in));
  W.resize(d_out, d_in);
  for (int r = 0; r < d_out; ++r)
    for (int c = 0; c < d_in; ++c) W(r, c) = init(eng);
  b = Eigen::MatrixXd::Zero(d_out, 1);
  dW = Eigen::MatrixXd::Zero(d_out, d_in);
  db = Eigen::MatrixXd::Zero(d_out, 1);
}

Eigen::VectorXd Linear::forward(const Eigen::VectorXd& x) {
  x_ = x;
  return W * x + b.col(0);
}

Eigen::VectorXd Linear::apply(const Eigen::VectorXd& x) const {
  return W * x + b.col(0);
}

Eigen::VectorXd Linear::backward(const Eigen::VectorXd& dy) {
  dW += dy * x_.transpose();
  db.col(0) += dy;
  return W.transpose() * dy;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".W", W, dW);
  fn(prefix + ".b", b, db);
}

// ---- ConvBlock ----

ConvBlock::ConvBlock(int ci, int co, int stride, std::mt19937_64& eng)
    : conv(ci, co, 3, stride, 1, eng), norm(co) {}

FeatureMap ConvBlock::forward(const FeatureMap& x) {
  FeatureMap y = norm.forward(conv.forward(x));
  relu_mask_ = (y.data.array() > 0.0).cast<double>();
  y.data = y.data.cwiseProduct(relu_mask_.matrix());
  return y;
}

FeatureMap ConvBlock::apply(const FeatureMap& x) const {
  FeatureMap y = norm.apply(conv.apply(x));
  y.data = y.data.cwiseMax(0.0);
  return y;
}

FeatureMap ConvBlock::backward(const FeatureMap& dy) {
  FeatureMap d = dy;
  d.data = d.data.cwiseProduct(relu_mask_.matrix());
  return conv.backward(norm.backward(d));
}

void ConvBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv.visit(prefix + ".conv", fn);
  norm.visit(prefix + ".norm", fn);
}

// ---- SegNet ----

void SegNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("segnet: in_channels must be >= 1");
  if (width < 1) throw ConfigError("segnet: width must be >= 1");
  if (depth < 2) throw ConfigError("segnet: depth must be >= 2");
  if (num_classes < 2) throw ConfigError("segnet: need at least 2 classes");
}

SegNet::SegNet(const SegNetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 eng(cfg.seed);
  blocks_.reserve(cfg.depth);
  blocks_.emplace_back(cfg.in_channels, cfg.width, 1, eng);
  blocks_.emplace_back(cfg.width, cfg.width, 2, eng);
  for (int i = 2; i < cfg.depth; ++i)
    blocks_.emplace_back(cfg.width, cfg.width, 1, eng);
  classifier_ = Conv2d(cfg.width, cfg.num_classes, 1, 1, 0, eng);
}

FeatureMap SegNet::forward(const FeatureMap& x) {
  if (x.height % 2 || x.width % 2)
    throw DimensionError("segnet: input dims must be even");
  FeatureMap h = x;
  for (auto& blk : blocks_) h = blk.forward(h);
  feature_ = h;
  return upsample2x(classifier_.forward(h));
}

void SegNet::backward(const FeatureMap& d_logits, const FeatureMap* d_feature) {
  FeatureMap d = classifier_.backward(upsample2x_adjoint(d_logits));
  if (d_feature) {
    if (d_feature->data.rows() != d.data.rows() ||
        d_feature->data.cols() != d.data.cols())
      throw DimensionError("segnet: feature cotangent shape mismatch");
    d.data += d_feature->data;
  }
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
    d = it->backward(d);
}

std::pair<FeatureMap, FeatureMap> SegNet::infer(const FeatureMap& x) const {
  if (x.height % 2 || x.width % 2)
    throw DimensionError("segnet: input dims must be even");
  FeatureMap h = x;
  for (const auto& blk : blocks_) h = blk.apply(h);
  FeatureMap logits = upsample2x(classifier_.apply(h));
  return {std::move(logits), std::move(h)};
}

void SegNet::zero_grad() {
  visit_params([](const std::string&, Eigen::MatrixXd&, Eigen::MatrixXd& g) {
    g.setZero();
  });
}

void SegNet::visit_params(const ParamVisitor& fn) {
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].visit("segnet.block" + std::to_string(i), fn);
  classifier_.visit("segnet.classifier", fn);
}

// ---- ConvLSTM ----

ConvLSTMCell::ConvLSTMCell(int ci, int ch, std::mt19937_64& eng)
    : in_ch(ci), hid_ch(ch) {
  auto init_mat = [&](int rows, int fan_in) {
    std::normal_distribution<double> d(0.0, std::sqrt(1.0 / fan_in));
    Eigen::MatrixXd m(rows, fan_in);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < fan_in; ++c)
        m(r, c) = std::clamp(d(eng), -1.0, 1.0);
    return m;
  };
  Wx = init_mat(4 * ch, ci * ksize * ksize);
  Wh = init_mat(4 * ch, ch * ksize * ksize);
  b = Eigen::MatrixXd::Zero(4 * ch, 1);
  dWx = Eigen::MatrixXd::Zero(Wx.rows(), Wx.cols());
  dWh = Eigen::MatrixXd::Zero(Wh.rows(), Wh.cols());
  db = Eigen::MatrixXd::Zero(b.rows(), 1);
}

ConvLSTMCell::State ConvLSTMCell::zero_state(int h, int w) const {
  return {FeatureMap(hid_ch, h, w), FeatureMap(hid_ch, h, w)};
}

ConvLSTMCell::State ConvLSTMCell::step(const FeatureMap& x, const State& prev,
                                       bool record) {
  if (x.channels() != in_ch) throw DimensionError("convlstm: input channels");
  if (prev.h.height != x.height || prev.h.width != x.width)
    throw DimensionError("convlstm: state/input size mismatch");
  int ho, wo;
  Eigen::MatrixXd colx = im2col(x, ksize, 1, pad, ho, wo);
  Eigen::MatrixXd colh = im2col(prev.h, ksize, 1, pad, ho, wo);
  Eigen::MatrixXd z = Wx * colx + Wh * colh;
  z.colwise() += b.col(0);
  const int P = x.pixels(), C = hid_ch;
  auto sig = [](const Eigen::MatrixXd& m) {
    return ((-m.array()).exp() + 1.0).inverse().matrix().eval();
  };
  Eigen::MatrixXd i = sig(z.topRows(C));
  Eigen::MatrixXd f = sig(z.middleRows(C, C));
  Eigen::MatrixXd g = z.middleRows(2 * C, C).array().tanh().matrix();
  Eigen::MatrixXd o = sig(z.bottomRows(C));
  State next;
  next.c = FeatureMap(C, x.height, x.width);
  next.h = FeatureMap(C, x.height, x.width);
  next.c.data = f.cwiseProduct(prev.c.data) + i.cwiseProduct(g);
  Eigen::MatrixXd tanh_c = next.c.data.array().tanh().matrix();
  next.h.data = o.cwiseProduct(tanh_c);
  if (record) {
    StepCache sc;
    sc.colx = std::move(colx);
    sc.colh = std::move(colh);
    sc.i = std::move(i);
    sc.f = std::move(f);
    sc.g = std::move(g);
    sc.o = std::move(o);
    sc.c_prev = prev.c.data;
    sc.c = next.c.data;
    sc.tanh_c = std::move(tanh_c);
    sc.h = x.height;
    sc.w = x.width;
    trace_.push_back(std::move(sc));
  }
  (void)P;
  return next;
}

void ConvLSTMCell::clear_trace() { trace_.clear(); }

std::vector<FeatureMap> ConvLSTMCell::backward_sequence(
    const std::vector<FeatureMap>& d_hidden) {
  const int T = static_cast<int>(trace_.size());
  if (static_cast<int>(d_hidden.size()) != T)
    throw DimensionError("convlstm: cotangent count != recorded steps");
  std::vector<FeatureMap> d_inputs(T);
  if (T == 0) return d_inputs;
  const int C = hid_ch;
  Eigen::MatrixXd dh_next, dc_next;
  for (int t = T - 1; t >= 0; --t) {
    const StepCache& sc = trace_[t];
    const int P = sc.h * sc.w;
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(C, P);
    if (d_hidden[t].height > 0) dh = d_hidden[t].data;
    if (t < T - 1) dh += dh_next;
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(C, P);
    if (t < T - 1) dc = dc_next;

    const Eigen::ArrayXXd do_ = dh.array() * sc.tanh_c.array();
    dc.array() +=
        dh.array() * sc.o.array() * (1.0 - sc.tanh_c.array().square());
    const Eigen::ArrayXXd df = dc.array() * sc.c_prev.array();
    const Eigen::ArrayXXd di = dc.array() * sc.g.array();
    const Eigen::ArrayXXd dg = dc.array() * sc.i.array();
    dc_next = (dc.array() * sc.f.array()).matrix();

    Eigen::MatrixXd dz(4 * C, P);
    dz.topRows(C) = (di * sc.i.array() * (1.0 - sc.i.array())).matrix();
    dz.middleRows(C, C) = (df * sc.f.array() * (1.0 - sc.f.array())).matrix();
    dz.middleRows(2 * C, C) = (dg * (1.0 - sc.g.array().square())).matrix();
    dz.bottomRows(C) = (do_ * sc.o.array() * (1.0 - sc.o.array())).matrix();

    dWx += dz * sc.colx.transpose();
    dWh += dz * sc.colh.transpose();
    db.col(0) += dz.rowwise().sum();
    d_inputs[t] =
        col2im(Wx.transpose() * dz, in_ch, sc.h, sc.w, ksize, 1, pad);
    dh_next =
        col2im(Wh.transpose() * dz, C, sc.h, sc.w, ksize, 1, pad).data;
  }
  trace_.clear();
  return d_inputs;
}

void ConvLSTMCell::clip_params() {
  Wx = Wx.cwiseMax(-1.0).cwiseMin(1.0);
  Wh = Wh.cwiseMax(-1.0).cwiseMin(1.0);
  b = b.cwiseMax(-1.0).cwiseMin(1.0);
}

void ConvLSTMCell::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".Wx", Wx, dWx);
  fn(prefix + ".Wh", Wh, dWh);
  fn(prefix + ".b", b, db);
}

// ---- EmbedHead ----

void EmbedHeadConfig::validate() const {
  if (pool_size < 1) throw ConfigError("embed head: pool_size must be >= 1");
  if (hidden_channels < 1)
    throw ConfigError("embed head: hidden_channels must be >= 1");
  if (embed_dim < 1) throw ConfigError("embed head: embed_dim must be >= 1");
}

EmbedHead::EmbedHead(const EmbedHeadConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 eng(cfg.seed);
  lstm_ = ConvLSTMCell(1, cfg.hidden_channels, eng);
  proj_ = Linear(cfg.hidden_channels, cfg.embed_dim, eng);
}

namespace {

int pool_factor_for(const Eigen::MatrixXd& m, int pool_size) {
  if (m.rows() != m.cols())
    throw DimensionError("embed head: similarity map must be square");
  const int n = static_cast<int>(m.rows());
  if (n % pool_size)
    throw DimensionError("embed head: map side not divisible by pool size");
  return n / pool_size;
}

}  // namespace

Eigen::VectorXd EmbedHead::forward(
    const std::vector<Eigen::MatrixXd>& sim_maps) {
  if (sim_maps.empty()) throw DimensionError("embed head: empty sequence");
  lstm_.clear_trace();
  pool_factors_.clear();
  const int S = cfg_.pool_size;
  ConvLSTMCell::State st = lstm_.zero_state(S, S);
  for (const auto& m : sim_maps) {
    const int f = pool_factor_for(m, S);
    pool_factors_.push_back(f);
    FeatureMap x(1, static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) x.at(0, r, c) = m(r, c);
    st = lstm_.step(f == 1 ? x : avg_pool(x, f), st, true);
  }
  final_h_ = st.h;
  steps_ = static_cast<int>(sim_maps.size());
  Eigen::VectorXd pooled = st.h.data.rowwise().mean();
  return proj_.forward(pooled);
}

Eigen::VectorXd EmbedHead::apply(
    const std::vector<Eigen::MatrixXd>& sim_maps) const {
  if (sim_maps.empty()) throw DimensionError("embed head: empty sequence");
  const int S = cfg_.pool_size;
  ConvLSTMCell lstm_copy = lstm_;
  lstm_copy.clear_trace();
  ConvLSTMCell::State st = lstm_copy.zero_state(S, S);
  for (const auto& m : sim_maps) {
    const int f = pool_factor_for(m, S);
    FeatureMap x(1, static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) x.at(0, r, c) = m(r, c);
    st = lstm_copy.step(f == 1 ? x : avg_pool(x, f), st, false);
  }
  return proj_.apply(st.h.data.rowwise().mean());
}

std::vector<Eigen::MatrixXd> EmbedHead::backward(
    const Eigen::VectorXd& d_embed) {
  if (steps_ == 0) throw DimensionError("embed head: backward before forward");
  const Eigen::VectorXd d_pooled = proj_.backward(d_embed);
  const int S = cfg_.pool_size;
  FeatureMap d_h(cfg_.hidden_channels, S, S);
  d_h.data = (d_pooled / (S * S)).replicate(1, S * S);
  std::vector<FeatureMap> d_hidden(steps_);
  d_hidden[steps_ - 1] = d_h;
  std::vector<FeatureMap> d_inputs = lstm_.backward_sequence(d_hidden);
  std::vector<Eigen::MatrixXd> out(steps_);
  for (int t = 0; t < steps_; ++t) {
    const int f = pool_factors_[t];
    const FeatureMap dm =
        f == 1 ? d_inputs[t] : avg_pool_backward(d_inputs[t], f);
    Eigen::MatrixXd m(dm.height, dm.width);
    for (int r = 0; r < dm.height; ++r)
      for (int c = 0; c < dm.width; ++c) m(r, c) = dm.at(0, r, c);
    out[t] = std::move(m);
  }
  return out;
}

void EmbedHead::zero_grad() {
  visit_params([](const std::string&, Eigen::MatrixXd&, Eigen::MatrixXd& g) {
    g.setZero();
  });
}

void EmbedHead::visit_params(const ParamVisitor& fn) {
  lstm_.visit("mfhead.lstm", fn);
  proj_.visit("mfhead.proj", fn);
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::ifstream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError(std::string("truncated checkpoint: ") + what);
  return v;
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in, const char* what) {
  const auto n = get<std::uint32_t>(in, what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError(std::string("truncated checkpoint: ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::string& config_json,
                     const std::map<std::string, Eigen::MatrixXd>& tensors) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError("cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    put(out, kVersion);
    put_string(out, config_json);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
      put_string(out, name);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
    }
    if (!out) throw FormatError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(const std::filesystem::path& path,
                     std::string& config_json,
                     std::map<std::string, Eigen::MatrixXd>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad checkpoint magic in " + path.string());
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version in " + path.string());
  config_json = get_string(in, "config");
  const auto count = get<std::uint32_t>(in, "tensor count");
  tensors.clear();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, "tensor name");
    const auto rows = get<std::uint64_t>(in, "rows");
    const auto cols = get<std::uint64_t>(in, "cols");
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw FormatError("truncated checkpoint tensor in " +
                               path.string());
    tensors[name] = std::move(m);
  }
}

std::string segnet_config_json(const SegNetConfig& cfg,
                               const EmbedHeadConfig* mf) {
  json j = {{"segnet",
             {{"in_channels", cfg.in_channels},
              {"width", cfg.width},
              {"depth", cfg.depth},
              {"num_classes", cfg.num_classes},
              {"seed", cfg.seed}}}};
  if (mf)
    j["mfhead"] = {{"pool_size", mf->pool_size},
                   {"hidden_channels", mf->hidden_channels},
                   {"embed_dim", mf->embed_dim},
                   {"seed", mf->seed}};
  return j.dump();
}

namespace {

// architecture fields only; seeds may differ between save and load
json arch_of(const json& j) {
  json out;
  const json& s = j.at("segnet");
  out["segnet"] = {{"in_channels", s.at("in_channels")},
                   {"width", s.at("width")},
                   {"depth", s.at("depth")},
                   {"num_classes", s.at("num_classes")}};
  if (j.contains("mfhead")) {
    const json& m = j.at("mfhead");
    out["mfhead"] = {{"pool_size", m.at("pool_size")},
                     {"hidden_channels", m.at("hidden_channels")},
                     {"embed_dim", m.at("embed_dim")}};
  }
  return out;
}

}  // namespace

void save_model(const std::filesystem::path& path, SegNet& net,
                EmbedHead* mf) {
  std::map<std::string, Eigen::MatrixXd> tensors;
  auto grab = [&](const std::string& name, Eigen::MatrixXd& p,
                  Eigen::MatrixXd&) { tensors[name] = p; };
  net.visit_params(grab);
  if (mf) mf->visit_params(grab);
  save_checkpoint(path,
                  segnet_config_json(net.config(),
                                     mf ? &mf->config() : nullptr),
                  tensors);
}

void load_model(const std::filesystem::path& path, SegNet& net,
                EmbedHead* mf) {
  std::string config_json;
  std::map<std::string, Eigen::MatrixXd> tensors;
  load_checkpoint(path, config_json, tensors);
  json stored, wanted;
  try {
    stored = arch_of(json::parse(config_json));
    wanted = arch_of(json::parse(
        segnet_config_json(net.config(), mf ? &mf->config() : nullptr)));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint config block: ") + e.what());
  }
  if (stored != wanted)
    throw ConfigError("checkpoint config does not match the model: stored " +
                      stored.dump() + " vs " + wanted.dump());
  size_t used = 0;
  auto put_back = [&](const std::string& name, Eigen::MatrixXd& p,
                      Eigen::MatrixXd&) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw ConfigError("checkpoint is missing tensor " + name);
    if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
      throw ConfigError("checkpoint tensor shape mismatch for " + name);
    p = it->second;
    ++used;
  };
  net.visit_params(put_back);
  if (mf) mf->visit_params(put_back);
  if (used != tensors.size())
    throw ConfigError("checkpoint holds extra tensors");
}

}  // namespace vseg::nets
