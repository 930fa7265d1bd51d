#include "vseg/losses.hpp"
#include "vseg/warp.hpp"

#include <algorithm>
#include <cmath>

namespace vseg::losses {

using nets::FeatureMap;

void LossWeights::validate() const {
  if (lambda_reg < 0.0)
    throw ValidationError("loss weights: lambda_reg must be >= 0");
  if (frame_gap < 1) throw ValidationError("loss weights: frame gap k >= 1");
}

double cross_entropy(const FeatureMap& logits, const LabelMap& label,
                     FeatureMap* d_logits) {
  const int K = logits.channels(), H = logits.height, W = logits.width;
  if (label.rows() != H || label.cols() != W)
    throw DimensionError("cross_entropy: label shape mismatch");
  FeatureMap q = nets::softmax(logits);
  if (d_logits) *d_logits = FeatureMap(K, H, W);

  int valid = 0;
  double nll = 0;
  for (int p = 0; p < H * W; ++p) {
    const std::uint8_t y = label(p / W, p % W);
    if (y == kIgnoreIndex) continue;
    if (y >= K)
      throw ValidationError("cross_entropy: label id exceeds class count");
    nll -= std::log(std::max(q.data(y, p), 1e-300));
    ++valid;
  }
  if (valid == 0) return 0.0;
  if (d_logits) {
    const double inv = 1.0 / valid;
    for (int p = 0; p < H * W; ++p) {
      const std::uint8_t y = label(p / W, p % W);
      if (y == kIgnoreIndex) continue;
      d_logits->data.col(p) = q.data.col(p) * inv;
      d_logits->data(y, p) -= inv;
    }
  }
  return nll / valid;
}

namespace {

// columns normalized to unit length; zero columns stay zero
Eigen::MatrixXd unit_columns(const Eigen::MatrixXd& x, int* zero_count) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (int i = 0; i < x.cols(); ++i) {
    const double n = x.col(i).norm();
    if (n == 0.0) {
      out.col(i).setZero();
      if (zero_count) ++*zero_count;
    } else {
      out.col(i) = x.col(i) / n;
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd at_operator(const Eigen::MatrixXd& x1,
                            const Eigen::MatrixXd& x2, int* zero_norm_count) {
  if (x1.rows() != x2.rows())
    throw DimensionError("at_operator: channel count mismatch");
  if (x1.cols() != x2.cols())
    throw DimensionError("at_operator: pixel count mismatch");
  const Eigen::MatrixXd u1 = unit_columns(x1, zero_norm_count);
  const Eigen::MatrixXd u2 = unit_columns(x2, zero_norm_count);
  return u1.transpose() * u2;
}

void at_operator_backward(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                          const Eigen::MatrixXd& d_sim, Eigen::MatrixXd& d_x1,
                          Eigen::MatrixXd& d_x2) {
  if (d_sim.rows() != x1.cols() || d_sim.cols() != x2.cols())
    throw DimensionError("at_operator_backward: cotangent shape mismatch");
  if (d_x1.rows() != x1.rows() || d_x1.cols() != x1.cols())
    d_x1 = Eigen::MatrixXd::Zero(x1.rows(), x1.cols());
  if (d_x2.rows() != x2.rows() || d_x2.cols() != x2.cols())
    d_x2 = Eigen::MatrixXd::Zero(x2.rows(), x2.cols());
  const Eigen::MatrixXd u1 = unit_columns(x1, nullptr);
  const Eigen::MatrixXd u2 = unit_columns(x2, nullptr);
  const Eigen::MatrixXd du1 = u2 * d_sim.transpose();  // C x N
  const Eigen::MatrixXd du2 = u1 * d_sim;              // C x N
  for (int i = 0; i < x1.cols(); ++i) {
    const double n = x1.col(i).norm();
    if (n == 0.0) continue;
    const Eigen::VectorXd u = u1.col(i);
    d_x1.col(i) += (du1.col(i) - u * u.dot(du1.col(i))) / n;
  }
  for (int j = 0; j < x2.cols(); ++j) {
    const double n = x2.col(j).norm();
    if (n == 0.0) continue;
    const Eigen::VectorXd u = u2.col(j);
    d_x2.col(j) += (du2.col(j) - u * u.dot(du2.col(j))) / n;
  }
}

double pf_loss(const Eigen::MatrixXd& q_t_s, const Eigen::MatrixXd& q_tk_s,
               const Eigen::MatrixXd& q_t_t, const Eigen::MatrixXd& q_tk_t,
               Eigen::MatrixXd* d_q_t_s, Eigen::MatrixXd* d_q_tk_s,
               int* zero_norm_count) {
  if (q_t_s.cols() != q_t_t.cols() || q_tk_s.cols() != q_tk_t.cols())
    throw DimensionError("pf_loss: student/teacher pooled sizes differ");
  const Eigen::MatrixXd a_s = at_operator(q_t_s, q_tk_s, zero_norm_count);
  const Eigen::MatrixXd a_t = at_operator(q_t_t, q_tk_t, nullptr);
  const double n2 = static_cast<double>(a_s.rows()) * a_s.cols();
  const Eigen::MatrixXd diff = a_s - a_t;
  const double loss = diff.squaredNorm() / n2;
  if (d_q_t_s || d_q_tk_s) {
    Eigen::MatrixXd da = (2.0 / n2) * diff;
    Eigen::MatrixXd d1, d2;
    at_operator_backward(q_t_s, q_tk_s, da, d1, d2);
    if (d_q_t_s) {
      if (d_q_t_s->size() == 0)
        *d_q_t_s = Eigen::MatrixXd::Zero(q_t_s.rows(), q_t_s.cols());
      *d_q_t_s += d1;
    }
    if (d_q_tk_s) {
      if (d_q_tk_s->size() == 0)
        *d_q_tk_s = Eigen::MatrixXd::Zero(q_tk_s.rows(), q_tk_s.cols());
      *d_q_tk_s += d2;
    }
  }
  return loss;
}

double mf_loss(const Eigen::VectorXd& e_s, const Eigen::VectorXd& e_t,
               Eigen::VectorXd* d_e_s) {
  if (e_s.size() != e_t.size())
    throw DimensionError("mf_loss: embedding dims differ");
  const Eigen::VectorXd diff = e_s - e_t;
  if (d_e_s) *d_e_s = 2.0 * diff;
  return diff.squaredNorm();
}

Eigen::VectorXd normalize_embedding(const Eigen::VectorXd& e) {
  const double n = e.norm();
  if (n < 1e-9) {
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(e.size());
    if (e.size() > 0) unit(0) = 1.0;
    return unit;
  }
  return e / n;
}

TemporalLossResult temporal_loss(const FeatureMap& q_t, const FeatureMap& q_tk,
                                 const FlowField& flow, const Planes& frame_t,
                                 const Planes& frame_tk, bool with_grad,
                                 bool symmetric) {
  const int K = q_t.channels(), H = q_t.height, W = q_t.width;
  if (q_tk.channels() != K || q_tk.height != H || q_tk.width != W)
    throw DimensionError("temporal_loss: probability map shapes differ");
  if (flow.height() != H || flow.width() != W)
    throw DimensionError("temporal_loss: flow shape mismatch");
  if (frame_t.height() != H || frame_t.width() != W ||
      !frame_t.same_shape(frame_tk))
    throw DimensionError("temporal_loss: frame shape mismatch");
  for (int p = 0; p < H * W; ++p) {
    if (std::abs(q_t.data.col(p).sum() - 1.0) > 1e-4 ||
        std::abs(q_tk.data.col(p).sum() - 1.0) > 1e-4)
      throw ValidationError("temporal_loss: probabilities must sum to 1");
  }

  // warped, renormalized, detached target
  auto warped = warp::backward_warp(nets::to_planes(q_tk), flow);
  FeatureMap q_hat = nets::from_planes(warped.image);
  for (int p = 0; p < H * W; ++p) {
    const double s = std::max(q_hat.data.col(p).sum(), 1e-12);
    q_hat.data.col(p) /= s;
  }

  auto warped_img = warp::backward_warp(frame_tk, flow);
  Array2D v = warp::occlusion_mask(frame_t, warped_img.image);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (!warped.valid(y, x)) v(y, x) = 0.0;

  TemporalLossResult res;
  res.reliability = v;
  if (with_grad) res.d_q = FeatureMap(K, H, W);
  const double n = static_cast<double>(H) * W;
  double acc = 0;
  for (int p = 0; p < H * W; ++p) {
    const double vp = v(p / W, p % W);
    if (vp == 0.0) continue;
    // renormalize both sides so bit-identical inputs give exactly log(1) = 0
    const double s = std::max(q_t.data.col(p).sum(), 1e-12);
    double kl = 0;
    for (int c = 0; c < K; ++c) {
      const double qc = q_t.data(c, p) / s;
      const double qh = std::max(q_hat.data(c, p), 1e-12);
      if (qc > 0.0) kl += qc * std::log(qc / qh);
    }
    acc += vp * kl;
    if (symmetric) {
      for (int c = 0; c < K; ++c) {
        const double qh = q_hat.data(c, p);
        const double qc = std::max(q_t.data(c, p) / s, 1e-12);
        if (qh > 0.0) acc += vp * qh * std::log(qh / qc);
      }
    }
    if (with_grad) {
      for (int c = 0; c < K; ++c) {
        const double qc = std::max(q_t.data(c, p) / s, 1e-12);
        const double qh = std::max(q_hat.data(c, p), 1e-12);
        double g = (std::log(qc / qh) - kl) / s;
        if (symmetric) g = 0.5 * (g + (1.0 - qh / qc) / s);
        res.d_q.data(c, p) = vp * g / n;
      }
    }
  }
  res.value = (symmetric ? 0.5 : 1.0) * acc / n;
  return res;
}

namespace {

struct Candidate {
  int i, j;
  double score;
};

double soft_iou(const Array2D& a, const Array2D& b) {
  const double inter = a.min(b).sum();
  const double uni = a.max(b).sum();
  return uni > 0.0 ? inter / uni : 0.0;
}

bool centroid_of(const Array2D& m, double& cy, double& cx) {
  const double mass = m.sum();
  if (mass <= 0.0) return false;
  double sy = 0, sx = 0;
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x) {
      sy += y * m(y, x);
      sx += x * m(y, x);
    }
  cy = sy / mass;
  cx = sx / mass;
  return true;
}

}  // namespace

std::vector<std::pair<int, int>> match_instances(
    const std::vector<Array2D>& masks_t, const std::vector<Array2D>& masks_t1,
    const std::vector<double>& scores_t, const std::vector<double>& scores_t1,
    const MatchWeights& w) {
  if (masks_t.size() != scores_t.size() ||
      masks_t1.size() != scores_t1.size())
    throw ValidationError("match_instances: score count != mask count");
  std::vector<Candidate> cands;
  for (size_t i = 0; i < masks_t.size(); ++i)
    for (size_t j = 0; j < masks_t1.size(); ++j) {
      if (masks_t[i].rows() != masks_t1[j].rows() ||
          masks_t[i].cols() != masks_t1[j].cols())
        throw DimensionError("match_instances: mask shapes differ");
      const double iou = soft_iou(masks_t[i], masks_t1[j]);
      if (iou <= w.iou_threshold) continue;
      const double score_sim =
          std::max(0.0, 1.0 - std::abs(scores_t[i] - scores_t1[j]));
      double prox = 0.0;
      double cy1, cx1, cy2, cx2;
      if (centroid_of(masks_t[i], cy1, cx1) &&
          centroid_of(masks_t1[j], cy2, cx2)) {
        const double diag = std::hypot((double)masks_t[i].rows() - 1,
                                       (double)masks_t[i].cols() - 1);
        const double d = std::hypot(cy1 - cy2, cx1 - cx2);
        prox = diag > 0.0 ? std::max(0.0, 1.0 - d / diag) : 1.0;
      }
      cands.push_back({static_cast<int>(i), static_cast<int>(j),
                       w.iou * iou + w.score * score_sim + w.centroid * prox});
    }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.i != b.i) return a.i < b.i;
                     return a.j < b.j;
                   });
  std::vector<char> used_i(masks_t.size(), 0), used_j(masks_t1.size(), 0);
  std::vector<std::pair<int, int>> out;
  for (const Candidate& c : cands) {
    if (used_i[c.i] || used_j[c.j]) continue;
    used_i[c.i] = used_j[c.j] = 1;
    out.push_back({c.i, c.j});
  }
  return out;
}

double instance_temporal_loss(const std::vector<Array2D>& masks_t,
                              const std::vector<Array2D>& masks_t1,
                              const std::vector<std::pair<int, int>>& matching,
                              const FlowField& flow, const Planes& frame_t,
                              const Planes& frame_t1) {
  auto warped_img = warp::backward_warp(frame_t1, flow);
  Array2D v = warp::occlusion_mask(frame_t, warped_img.image);
  for (int y = 0; y < v.rows(); ++y)
    for (int x = 0; x < v.cols(); ++x)
      if (!warped_img.valid(y, x)) v(y, x) = 0.0;
  double loss = 0;
  for (const auto& [i, j] : matching) {
    if (i < 0 || i >= static_cast<int>(masks_t.size()) || j < 0 ||
        j >= static_cast<int>(masks_t1.size()))
      throw ValidationError("instance_temporal_loss: match index out of range");
    const Array2D warped = warp::backward_warp_plane(masks_t1[j], flow);
    loss += (v * (masks_t[i] - warped).square()).sum();
  }
  return loss;
}

// ---- combined objective ----

namespace {

// pool a C x H x W map onto the S x S grid (anisotropic factors)
FeatureMap pool_to_grid(const FeatureMap& x, int s) {
  if (x.height % s || x.width % s)
    throw DimensionError(
        "combined_loss: map dims not divisible by the pooling grid");
  return nets::avg_pool2(x, x.height / s, x.width / s);
}

FeatureMap unpool_from_grid(const Eigen::MatrixXd& d_pooled, int s, int h,
                            int w) {
  FeatureMap d(static_cast<int>(d_pooled.rows()), s, s);
  d.data = d_pooled;
  return nets::avg_pool2_backward(d, h / s, w / s);
}

bool nonzero(const FeatureMap& f) {
  return f.data.size() > 0 && f.data.cwiseAbs().maxCoeff() > 0.0;
}

}  // namespace

LossTerms combined_loss(const std::vector<Triplet>& batch,
                        const ModelBundle& models, const LossSwitches& sw,
                        const LossWeights& weights, int pool_size,
                        bool backprop) {
  weights.validate();
  if (batch.empty()) throw ValidationError("combined_loss: empty batch");
  if (!models.student)
    throw ValidationError("combined_loss: student net is required");
  if ((sw.pf || sw.mf) && !models.teacher)
    throw ValidationError("combined_loss: pf/mf need a teacher net");
  if (sw.mf && !models.mf_head)
    throw ValidationError("combined_loss: mf needs the embedding head");

  LossTerms acc;
  const double inv_b = 1.0 / batch.size();
  const double lam = weights.lambda_reg;

  for (const Triplet& tr : batch) {
    std::array<FeatureMap, 3> x, logits, feat, q;
    for (int i = 0; i < 3; ++i) {
      x[i] = nets::from_planes(tr.frames[i].image);
      auto [lg, ft] = models.student->infer(x[i]);
      logits[i] = std::move(lg);
      feat[i] = std::move(ft);
      q[i] = nets::softmax(logits[i]);
    }
    std::array<FeatureMap, 3> t_q, t_feat;
    if (sw.pf || sw.mf) {
      for (int i = 0; i < 3; ++i) {
        auto [lg, ft] = models.teacher->infer(x[i]);
        t_q[i] = nets::softmax(lg);
        t_feat[i] = std::move(ft);
      }
    }

    std::array<FeatureMap, 3> d_logits, d_prob, d_feat;
    for (int i = 0; i < 3; ++i) {
      d_logits[i] = FeatureMap(logits[i].channels(), logits[i].height,
                               logits[i].width);
      d_prob[i] = FeatureMap(q[i].channels(), q[i].height, q[i].width);
      d_feat[i] =
          FeatureMap(feat[i].channels(), feat[i].height, feat[i].width);
    }

    double trip_ce = 0, trip_tl = 0, trip_pf = 0, trip_mf = 0;

    // Per-frame mean keeps the CE scale identical whether one frame or all
    // three carry labels, so every scheme trains at the same gradient scale.
    int n_lab = 0;
    for (const auto& f : tr.frames)
      if (f.label) ++n_lab;
    for (int i = 0; i < 3; ++i) {
      if (!tr.frames[i].label) continue;
      FeatureMap dce;
      trip_ce += cross_entropy(logits[i], *tr.frames[i].label,
                               backprop ? &dce : nullptr) /
                 n_lab;
      if (backprop && dce.data.size() > 0)
        d_logits[i].data += (inv_b / n_lab) * dce.data;
    }

    if (sw.tl && tr.consecutive && tr.flow_mid_to_next) {
      auto r = temporal_loss(q[1], q[2], *tr.flow_mid_to_next,
                             tr.frames[1].image, tr.frames[2].image, backprop);
      trip_tl = r.value;
      if (backprop) d_prob[1].data += (lam * inv_b) * r.d_q.data;
    }

    if (sw.pf) {
      std::array<Eigen::MatrixXd, 3> p_s, p_t, dp;
      for (int i = 0; i < 3; ++i) {
        p_s[i] = pool_to_grid(q[i], pool_size).data;
        p_t[i] = pool_to_grid(t_q[i], pool_size).data;
      }
      for (int a : {0, 1}) {
        const int b = a + 1;
        trip_pf += pf_loss(p_s[a], p_s[b], p_t[a], p_t[b],
                           backprop ? &dp[a] : nullptr,
                           backprop ? &dp[b] : nullptr, &acc.cosine_zero_rows);
      }
      if (backprop)
        for (int i = 0; i < 3; ++i)
          if (dp[i].size() > 0)
            d_prob[i].data +=
                (lam * inv_b) *
                unpool_from_grid(dp[i], pool_size, q[i].height, q[i].width)
                    .data;
    }

    if (sw.mf) {
      std::vector<Eigen::MatrixXd> f_s(3), a_s(3), a_t(3);
      for (int i = 0; i < 3; ++i) {
        f_s[i] = pool_to_grid(feat[i], pool_size).data;
        const Eigen::MatrixXd f_t = pool_to_grid(t_feat[i], pool_size).data;
        a_s[i] = at_operator(f_s[i], f_s[i], &acc.cosine_zero_rows);
        a_t[i] = at_operator(f_t, f_t, nullptr);
      }
      const Eigen::VectorXd e_t =
          normalize_embedding(models.mf_head->apply(a_t));
      Eigen::VectorXd d_e;
      const Eigen::VectorXd e_s = backprop ? models.mf_head->forward(a_s)
                                           : models.mf_head->apply(a_s);
      trip_mf = mf_loss(e_s, e_t, backprop ? &d_e : nullptr);
      if (backprop) {
        std::vector<Eigen::MatrixXd> d_a =
            models.mf_head->backward(lam * inv_b * d_e);
        for (int i = 0; i < 3; ++i) {
          Eigen::MatrixXd d_pool;
          at_operator_backward(f_s[i], f_s[i], d_a[i], d_pool, d_pool);
          d_feat[i].data += unpool_from_grid(d_pool, pool_size,
                                             feat[i].height, feat[i].width)
                                .data;
        }
      }
    }

    if (backprop) {
      for (int i = 0; i < 3; ++i) {
        FeatureMap dl = d_logits[i];
        if (nonzero(d_prob[i]))
          dl.data += nets::softmax_backward(q[i], d_prob[i]).data;
        const bool feat_cot = nonzero(d_feat[i]);
        if (!feat_cot && !nonzero(dl)) continue;
        models.student->forward(x[i]);
        models.student->backward(dl, feat_cot ? &d_feat[i] : nullptr);
      }
    }

    acc.ce += inv_b * trip_ce;
    acc.tl += inv_b * trip_tl;
    acc.pf += inv_b * trip_pf;
    acc.mf += inv_b * trip_mf;
  }
  return acc;
}

}  // namespace vseg::losses
