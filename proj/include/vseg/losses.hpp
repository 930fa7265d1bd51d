#pragma once

#include "vseg/nets.hpp"
#include "vseg/types.hpp"

#include <Eigen/Dense>
#include <array>
#include <utility>
#include <vector>

namespace vseg::losses {

struct LossWeights {
  double lambda_reg = 0.1;  // shared weight for every regularization term
  int frame_gap = 1;        // k, the temporal distance used by the TL term

  void validate() const;
};

/// Which regularizers participate; cross-entropy is always on.
struct LossSwitches {
  bool tl = false;
  bool pf = false;
  bool mf = false;
};

struct LossTerms {
  double ce = 0, tl = 0, pf = 0, mf = 0;
  int cosine_zero_rows = 0;  // degenerate zero-norm feature columns seen
  double total(double lambda) const { return ce + lambda * (tl + pf + mf); }
};

/// Mean negative log-likelihood over pixels whose label is not the ignore
/// index. Pixels may all be ignored, in which case the loss is 0.
double cross_entropy(const nets::FeatureMap& logits, const LabelMap& label,
                     nets::FeatureMap* d_logits = nullptr);

/// Pairwise cosine similarity between the columns of two C x N blocks:
/// out(i, j) = x1_i . x2_j / (|x1_i| |x2_j|). Zero-norm columns yield 0
/// for every entry they touch and bump the diagnostic counter.
Eigen::MatrixXd at_operator(const Eigen::MatrixXd& x1,
                            const Eigen::MatrixXd& x2,
                            int* zero_norm_count = nullptr);
/// Cotangents of the similarity map back onto both inputs (accumulated).
void at_operator_backward(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                          const Eigen::MatrixXd& d_sim, Eigen::MatrixXd& d_x1,
                          Eigen::MatrixXd& d_x2);

/// Mean squared difference between the student and teacher cross-frame
/// similarity maps built from the four pooled maps (C x N each). Teacher
/// maps are treated as constants. Optional gradients on the student pair.
double pf_loss(const Eigen::MatrixXd& q_t_s, const Eigen::MatrixXd& q_tk_s,
               const Eigen::MatrixXd& q_t_t, const Eigen::MatrixXd& q_tk_t,
               Eigen::MatrixXd* d_q_t_s = nullptr,
               Eigen::MatrixXd* d_q_tk_s = nullptr,
               int* zero_norm_count = nullptr);

/// Squared Euclidean distance between the two sequence embeddings; the
/// teacher embedding is a constant.
double mf_loss(const Eigen::VectorXd& e_s, const Eigen::VectorXd& e_t,
               Eigen::VectorXd* d_e_s = nullptr);

/// Unit-normalize a teacher embedding; a degenerate (near-zero) embedding
/// maps to the first basis vector.
Eigen::VectorXd normalize_embedding(const Eigen::VectorXd& e);

struct TemporalLossResult {
  double value = 0;
  nets::FeatureMap d_q;  // cotangent on q_t (probability space)
  Array2D reliability;   // V, already zeroed where the warp is invalid
};

/// Reliability-weighted KL between the prediction at t and the warped,
/// renormalized, detached prediction at t+k; mean over all pixels. q maps
/// must be per-pixel distributions (tolerance 1e-4).
TemporalLossResult temporal_loss(const nets::FeatureMap& q_t,
                                 const nets::FeatureMap& q_tk,
                                 const FlowField& flow, const Planes& frame_t,
                                 const Planes& frame_tk,
                                 bool with_grad = false,
                                 bool symmetric = false);

/// Greedy instance matching by w1*IoU + w2*score similarity + w3*centroid
/// proximity; pairs are admissible only when their soft IoU exceeds the
/// threshold. Unmatched instances are dropped.
struct MatchWeights {
  double iou = 1.0;
  double score = 0.25;
  double centroid = 0.25;
  double iou_threshold = 0.1;
};
std::vector<std::pair<int, int>> match_instances(
    const std::vector<Array2D>& masks_t, const std::vector<Array2D>& masks_t1,
    const std::vector<double>& scores_t, const std::vector<double>& scores_t1,
    const MatchWeights& w = {});

/// Sum over matched instances of the V-weighted, validity-masked squared
/// error between the mask at t and the warped mask from t+1 (sum over
/// pixels, not averaged).
double instance_temporal_loss(const std::vector<Array2D>& masks_t,
                              const std::vector<Array2D>& masks_t1,
                              const std::vector<std::pair<int, int>>& matching,
                              const FlowField& flow, const Planes& frame_t,
                              const Planes& frame_t1);

// ---- combined objective over training triplets ----

struct TripletFrame {
  Planes image;
  const LabelMap* label = nullptr;  // ground truth or pseudo label, if any
};

/// Time-ordered triplet (past frame, labeled frame, successor frame). The
/// TL term runs between frames[1] and frames[2] when the successor is the
/// immediate next frame and its flow is present.
struct Triplet {
  std::array<TripletFrame, 3> frames;
  const FlowField* flow_mid_to_next = nullptr;
  bool consecutive = false;
};

struct ModelBundle {
  nets::SegNet* student = nullptr;
  const nets::SegNet* teacher = nullptr;  // read-only; required for pf/mf
  nets::EmbedHead* mf_head = nullptr;     // shared between both branches
};

/// Evaluates ce + lambda*(tl + pf + mf) over the batch (every term is the
/// mean over triplets) and, when backprop is set, accumulates gradients
/// into the student net and the embedding head. The teacher is only ever
/// read through its inference path.
LossTerms combined_loss(const std::vector<Triplet>& batch,
                        const ModelBundle& models, const LossSwitches& sw,
                        const LossWeights& weights, int pool_size = 16,
                        bool backprop = true);

}  // namespace vseg::losses
