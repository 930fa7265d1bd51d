#pragma once

// Accuracy and smoothness metrics: mIoU / pixel accuracy over labeled
// frames, and temporal consistency (warped mIoU) over frame pairs.

#include <string>
#include <vector>

#include "vseg/nets.hpp"
#include "vseg/synthworld.hpp"
#include "vseg/types.hpp"

namespace vseg::eval {

struct PerClassRow {
  int class_id = 0;
  double iou = 0.0;  // meaningful iff iou_valid
  double tc = 0.0;   // meaningful iff tc_valid
  bool iou_valid = false;
  bool tc_valid = false;
};

struct MetricReport {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  double tc = 0.0;
  std::vector<PerClassRow> per_class;
  std::vector<double> per_pair_tc;  // curve of the first evaluated sequence
};

struct MiouResult {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<PerClassRow> per_class;
};

/// Global confusion-matrix mIoU and pixel accuracy over a frame list.
/// Pixels labeled kIgnoreIndex in the ground truth are excluded; classes
/// absent from both prediction and ground truth are skipped in the mean.
/// Throws DimensionError on shape mismatch, ValidationError when nothing
/// is left to evaluate or a label is out of range.
MiouResult miou(const std::vector<LabelMap>& preds,
                const std::vector<LabelMap>& gts, int num_classes);

/// Temporal consistency of one frame pair: q_tm1 is pulled onto frame t's
/// geometry by nearest-neighbor backward warping with `flow` (anchored at
/// frame t, pointing to t-1), then the class-wise IoU between q_t and the
/// warped map is averaged over the classes present on valid pixels.
/// Pixels warped from outside the frame are excluded; `gt_visible`, when
/// given, additionally excludes pixels whose source is occluded. A pair
/// with no valid pixels scores 1 (agreement holds vacuously).
double tc_pair(const LabelMap& q_t, const LabelMap& q_tm1,
               const FlowField& flow, const BinaryMap* gt_visible = nullptr);

struct TcResult {
  double tc = 0.0;
  std::vector<double> per_pair;
};

/// Mean of tc_pair over consecutive pairs plus the raw per-pair curve.
/// flows[i] is anchored at frame i+1 and points back to frame i (the
/// synthetic world's backward flow); occlusion, when given, holds the
/// matching backward visibility masks.
TcResult tc_sequence(const std::vector<LabelMap>& preds,
                     const std::vector<FlowField>& flows,
                     const std::vector<BinaryMap>* occlusion = nullptr);

/// Hard per-pixel class decisions for one frame.
LabelMap predict_labels(const nets::SegNet& net, const Planes& image);

/// Metric report over a dataset given externally computed predictions:
/// accuracy on every labeled frame of every sequence, temporal consistency
/// on the sequences selected by sampled_ids (using ground-truth flow and
/// visibility), per-class table, and the first selected sequence's per-pair
/// curve.
MetricReport evaluate_predictions(
    const std::vector<synth::VideoSequence>& sequences,
    const std::vector<std::vector<LabelMap>>& preds,
    const std::vector<int>& sampled_ids);

/// Runs the net on every frame and evaluates the predictions.
MetricReport evaluate_model(const nets::SegNet& net,
                            const std::vector<synth::VideoSequence>& sequences,
                            const std::vector<int>& sampled_ids);

/// Evaluation-subset id list: one integer per line, '#' starts a comment.
void save_id_list(const std::string& path, const std::vector<int>& ids);
std::vector<int> load_id_list(const std::string& path);

/// Flat key,index,value rows; index is empty for scalar metrics.
void write_report_csv(const std::string& path, const MetricReport& report);

/// Fixed-width text table with one row per class plus the overall line.
std::string render_report(const MetricReport& report);

}  // namespace vseg::eval
