#pragma once

#include "vseg/types.hpp"

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace vseg::nets {

/// Dense activation block: one row per channel, one column per pixel,
/// pixel index p = y * width + x.
struct FeatureMap {
  Eigen::MatrixXd data;
  int height = 0, width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int h, int w)
      : data(Eigen::MatrixXd::Zero(channels, h * w)), height(h), width(w) {}
  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }
  double& at(int c, int y, int x) { return data(c, y * width + x); }
  double at(int c, int y, int x) const { return data(c, y * width + x); }
};

FeatureMap from_planes(const Planes& p);
Planes to_planes(const FeatureMap& f);

using ParamVisitor =
    std::function<void(const std::string&, Eigen::MatrixXd& param,
                       Eigen::MatrixXd& grad)>;

// ---- stateless kernels ----

Eigen::MatrixXd im2col(const FeatureMap& x, int k, int stride, int pad,
                       int& out_h, int& out_w);
FeatureMap col2im(const Eigen::MatrixXd& dcol, int channels, int h, int w,
                  int k, int stride, int pad);

FeatureMap avg_pool(const FeatureMap& x, int factor);
FeatureMap avg_pool_backward(const FeatureMap& dy, int factor);
/// Separate vertical/horizontal factors (used to pool onto a square grid).
FeatureMap avg_pool2(const FeatureMap& x, int fy, int fx);
FeatureMap avg_pool2_backward(const FeatureMap& dy, int fy, int fx);

/// x2 bilinear upsampling with the half-pixel (align_corners=false)
/// convention, and its adjoint.
FeatureMap upsample2x(const FeatureMap& x);
FeatureMap upsample2x_adjoint(const FeatureMap& dy);

/// Bilinear resize to an arbitrary target size (half-pixel convention);
/// used by test-time augmentation.
FeatureMap resize_bilinear(const FeatureMap& x, int out_h, int out_w);

FeatureMap softmax(const FeatureMap& logits);
/// dz given q = softmax(z) and dq.
FeatureMap softmax_backward(const FeatureMap& q, const FeatureMap& dq);

FeatureMap hflip(const FeatureMap& x);

// ---- layers with parameters ----

struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  Eigen::MatrixXd W, dW;  // out_ch x (in_ch * k * k)
  Eigen::MatrixXd b, db;  // out_ch x 1

  Conv2d() = default;
  Conv2d(int ci, int co, int k, int s, int p, std::mt19937_64& eng);
  FeatureMap forward(const FeatureMap& x);      // caches for backward
  FeatureMap apply(const FeatureMap& x) const;  // no caching
  FeatureMap backward(const FeatureMap& dy);    // accumulates dW, db
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Eigen::MatrixXd col_;
  int in_h_ = 0, in_w_ = 0;
};

/// Per-pixel RMS normalization over channels with a learnable per-channel
/// gain and bias. No mean subtraction, so global brightness shifts in the
/// input survive into the features.
struct RMSNorm {
  Eigen::MatrixXd g, dg, b, db;  // channels x 1
  double eps = 1e-6;

  RMSNorm() = default;
  explicit RMSNorm(int channels);
  FeatureMap forward(const FeatureMap& x);
  FeatureMap apply(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Eigen::MatrixXd x_;
  Eigen::RowVectorXd inv_r_;
};

struct Linear {
  Eigen::MatrixXd W, dW;
  Eigen::MatrixXd b, db;

  Linear() = default;
  Linear(int d_in, int d_out, std::mt19937_64& eng);
  Eigen::VectorXd forward(const Eigen::VectorXd& x);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::VectorXd backward(const Eigen::VectorXd& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Eigen::VectorXd x_;
};

struct ConvBlock {
  Conv2d conv;
  RMSNorm norm;

  ConvBlock() = default;
  ConvBlock(int ci, int co, int stride, std::mt19937_64& eng);
  FeatureMap forward(const FeatureMap& x);
  FeatureMap apply(const FeatureMap& x) const;
  FeatureMap backward(const FeatureMap& dy);
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  Eigen::MatrixXd relu_mask_;
};

// ---- segmentation net ----

struct SegNetConfig {
  int in_channels = 3;
  int width = 32;
  int depth = 4;  // conv blocks before the classifier, including downsample
  int num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SegNetConfig&) const = default;
};

/// Small fully convolutional net: stride-1 stem, one stride-2 block, then
/// stride-1 blocks; a 1x1 classifier at half resolution; bilinear x2 back
/// to input resolution. The last block's activation doubles as the feature
/// tensor used by the attention transfer losses.
class SegNet {
 public:
  explicit SegNet(const SegNetConfig& cfg);

  FeatureMap forward(const FeatureMap& x);  // logits at input resolution
  const FeatureMap& feature() const { return feature_; }
  /// Backward through the whole net. d_feature, when given, is added to the
  /// gradient flowing into the last block's output (feature taps).
  void backward(const FeatureMap& d_logits, const FeatureMap* d_feature);

  /// Cache-free inference: returns {logits, feature}.
  std::pair<FeatureMap, FeatureMap> infer(const FeatureMap& x) const;

  void zero_grad();
  void visit_params(const ParamVisitor& fn);
  const SegNetConfig& config() const { return cfg_; }

 private:
  SegNetConfig cfg_;
  std::vector<ConvBlock> blocks_;
  Conv2d classifier_;
  FeatureMap feature_;
};

// ---- ConvLSTM ----

struct ConvLSTMCell {
  int in_ch = 0, hid_ch = 0, ksize = 3, pad = 1;
  Eigen::MatrixXd Wx, dWx;  // (4*hid) x (in*k*k), gate order i,f,g,o
  Eigen::MatrixXd Wh, dWh;  // (4*hid) x (hid*k*k)
  Eigen::MatrixXd b, db;    // (4*hid) x 1

  ConvLSTMCell() = default;
  ConvLSTMCell(int ci, int ch, std::mt19937_64& eng);

  struct State {
    FeatureMap h, c;
  };
  State zero_state(int h, int w) const;

  /// One recurrent step; when `record` is true the internals are pushed on
  /// the trace for backward_sequence.
  State step(const FeatureMap& x, const State& prev, bool record);

  void clear_trace();
  /// Full backpropagation through time over the recorded trace. d_hidden[t]
  /// is the cotangent on the hidden output of step t (may be empty maps for
  /// steps without a loss tap). Returns cotangents on the step inputs.
  std::vector<FeatureMap> backward_sequence(
      const std::vector<FeatureMap>& d_hidden);

  /// Project every parameter entry onto [-1, 1].
  void clip_params();
  void visit(const std::string& prefix, const ParamVisitor& fn);

 private:
  struct StepCache {
    Eigen::MatrixXd colx, colh;
    Eigen::MatrixXd i, f, g, o, c_prev, c, tanh_c;
    int h = 0, w = 0;
  };
  std::vector<StepCache> trace_;
};

// ---- sequence embedding head (for the memory flow loss) ----

struct EmbedHeadConfig {
  int pool_size = 16;      // side of the grid the attention map is pooled to
  int hidden_channels = 4;
  int embed_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EmbedHeadConfig&) const = default;
};

/// Recurrent encoder that folds a sequence of (pooled) pairwise-similarity
/// maps into one embedding vector: avg-pool each N x N map onto a
/// pool_size^2 grid, run a ConvLSTM over the sequence, spatially average the
/// final hidden state and project it linearly.
class EmbedHead {
 public:
  explicit EmbedHead(const EmbedHeadConfig& cfg);

  Eigen::VectorXd forward(const std::vector<Eigen::MatrixXd>& sim_maps);
  /// Cotangents on the input similarity maps.
  std::vector<Eigen::MatrixXd> backward(const Eigen::VectorXd& d_embed);
  Eigen::VectorXd apply(const std::vector<Eigen::MatrixXd>& sim_maps) const;

  void zero_grad();
  void clip_recurrent_params() { lstm_.clip_params(); }
  ConvLSTMCell& lstm() { return lstm_; }
  void visit_params(const ParamVisitor& fn);
  const EmbedHeadConfig& config() const { return cfg_; }

 private:
  EmbedHeadConfig cfg_;
  ConvLSTMCell lstm_;
  Linear proj_;
  FeatureMap final_h_;
  std::vector<int> pool_factors_;
  int steps_ = 0;
};

// ---- checkpoints ----

/// Binary checkpoint: magic, version, an embedded JSON config block and a
/// list of named float64 tensors. Written atomically (temp file + rename).
void save_checkpoint(const std::filesystem::path& path,
                     const std::string& config_json,
                     const std::map<std::string, Eigen::MatrixXd>& tensors);
void load_checkpoint(const std::filesystem::path& path,
                     std::string& config_json,
                     std::map<std::string, Eigen::MatrixXd>& tensors);

std::string segnet_config_json(const SegNetConfig& cfg,
                               const EmbedHeadConfig* mf);
void save_model(const std::filesystem::path& path, SegNet& net,
                EmbedHead* mf);
/// Restores parameters into an already constructed net. Throws ConfigError
/// if the stored config disagrees with the net's, FormatError on a bad
/// file, MissingFileError if absent.
void load_model(const std::filesystem::path& path, SegNet& net,
                EmbedHead* mf);

}  // namespace vseg::nets
