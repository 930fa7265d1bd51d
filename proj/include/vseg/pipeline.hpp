#pragma once

// Self-training orchestration: teacher training, test-time-augmented
// pseudo-labeling, dataset mixing, triplet sampling, and student training.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vseg/losses.hpp"
#include "vseg/nets.hpp"
#include "vseg/synthworld.hpp"
#include "vseg/types.hpp"

namespace vseg::pipeline {

struct TrainingTriplet {
  int sequence_id = 0;
  int frame_f = 0;  // context frame, up to `window` steps before the center
  int frame_c = 0;  // labeled (or pseudo-labeled) center frame
  int frame_b = 0;  // always frame_c + 1 so the temporal pair is adjacent
  bool degenerate_f = false;  // center at sequence start: frame_f == frame_c
};

enum class Provenance : std::uint8_t { ground_truth, pseudo };

struct PseudoLabelSet {
  // labels[s][t] holds a generated map only for frames without ground
  // truth; provenance[s][t] records which kind of supervision frame t has
  std::vector<std::vector<std::optional<LabelMap>>> labels;
  std::vector<std::vector<Provenance>> provenance;
};

struct TtaSpec {
  bool flips = true;
  std::vector<double> scales = {0.75, 1.0, 1.25};
};

struct TrainConfig {
  int epochs = 1;
  int batch_size = 8;       // triplets per optimizer step
  int steps_per_epoch = 0;  // 0: one pass over the eligible centers
  double base_lr = 0.1;
  double momentum = 0.9;
  double poly_power = 0.9;
  double lambda_reg = 0.1;       // weight of the regularizing terms
  double teacher_tl_weight = 1.0;  // the teacher objective adds tl plainly
  int frame_gap = 1;
  int window = 4;
  double rho = 1.0;  // pseudo:ground-truth sampling ratio
  bool pseudo_only = false;
  double pseudo_threshold = 0.0;
  int pool_size = 16;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SchemeSwitches {
  bool tl = false;
  bool pf = false;
  bool mf = false;
  bool pl = false;
};

/// Ablation scheme letters: a (baseline), b (pf), c (mf),
/// d (pf+mf), e (tl), f (pf+mf+tl), j (pl), k (tl+pl), l (pf+mf+tl+pl).
/// Throws ValidationError for anything else.
SchemeSwitches scheme_switches(char scheme);

struct LogRow {
  int epoch = 0;
  int step = 0;
  double ce = 0, tl = 0, pf = 0, mf = 0, total = 0, lr = 0;
};

/// Appends rows; the header line is written only when the file is new.
void append_log_csv(const std::string& path, const std::vector<LogRow>& rows);

/// One (sequence, frame) supervision site usable as a triplet center.
struct CenterRef {
  int sequence_id = 0;
  int frame = 0;
};

/// Combined view over ground-truth and pseudo supervision. Holds pointers
/// into the sequence and pseudo-label storage passed at build time; both
/// must outlive the view.
struct MixedDataset {
  const std::vector<synth::VideoSequence>* sequences = nullptr;
  std::vector<std::vector<const LabelMap*>> labels;  // null where unlabeled
  std::vector<std::vector<Provenance>> provenance;   // valid where labeled
  std::vector<CenterRef> gt_centers;
  std::vector<CenterRef> pseudo_centers;
  double rho = 1.0;
  bool pseudo_only = false;

  /// Draws a center honoring the mixing ratio: pseudo with probability
  /// rho/(1+rho), ground truth otherwise.
  CenterRef draw_center(std::mt19937_64& rng) const;
  bool draws_pseudo(std::mt19937_64& rng) const;
};

/// Builds the mixed view. `pseudo` may be null (ground truth only). When
/// pseudo supervision participates (non-null, rho > 0 or pseudo_only), the
/// corresponding center list must be non-empty.
MixedDataset combine_datasets(const std::vector<synth::VideoSequence>& seqs,
                              const PseudoLabelSet* pseudo, double rho,
                              bool pseudo_only = false);

/// Uniformly samples frame_f from [center-window, center-1] clipped at the
/// sequence start (center 0 degenerates to frame_f == 0, flagged);
/// frame_b is always center + 1. Throws ValidationError when the center
/// has no successor frame.
TrainingTriplet sample_triplet(const synth::VideoSequence& seq, int center,
                               int window, std::mt19937_64& rng);

/// Algorithm step 1: teacher trained on labeled frames with cross entropy,
/// plus the temporal loss whenever the labeled frame has a successor.
nets::SegNet train_teacher(const std::vector<synth::VideoSequence>& seqs,
                           const nets::SegNetConfig& arch,
                           const TrainConfig& cfg,
                           std::vector<LogRow>* log = nullptr);

/// Algorithm step 2: per unlabeled frame, average the softmax over
/// horizontal flips x scales (flipped/resized back first), take the
/// argmax, and suppress pixels whose peak probability is below threshold.
PseudoLabelSet generate_pseudo_labels(
    const nets::SegNet& teacher,
    const std::vector<synth::VideoSequence>& seqs, const TtaSpec& tta,
    double threshold = 0.0);

/// Algorithm step 4: student trained on sampled triplets under the
/// combined objective; the teacher is read-only; the embedding head is
/// updated and clipped only when the mf switch is on.
nets::SegNet train_student(const MixedDataset& data,
                           const nets::SegNet& teacher,
                           const nets::SegNetConfig& student_arch,
                           const nets::EmbedHeadConfig* head_cfg,
                           const TrainConfig& cfg, const SchemeSwitches& sw,
                           std::vector<LogRow>* log = nullptr,
                           nets::EmbedHead* head_out = nullptr);

/// Poly learning-rate schedule.
double poly_lr(double base, int iter, int max_iter, double power);

// ---- dataset on disk -------------------------------------------------

struct DatasetSpec {
  int count = 1;
  int height = 64, width = 64;
  int num_classes = 4;
  int num_frames = 12;
  int labeled_stride = 5;
  double jitter = 0.05;
  int min_shapes = 2, max_shapes = 4;
  double min_size = 14.0, max_size = 28.0;
  int max_speed = 2;
  double max_pan = 0.0;  // per-sequence camera drift, px/frame per axis
  double flow_noise_sigma = 0.0;
  std::uint64_t seed = 0;
  void validate() const;
};

DatasetSpec load_dataset_spec(const std::string& path);

/// Scene specs for `count` sequences with randomized shape layouts,
/// deterministically derived from the dataset seed.
std::vector<synth::SceneSpec> make_scene_specs(const DatasetSpec& spec);

/// Renders and writes seq_000/, seq_001/, ... plus dataset.json.
void save_dataset(const std::string& dir,
                  const std::vector<synth::SceneSpec>& scenes);
std::vector<synth::VideoSequence> load_dataset(const std::string& dir);

/// Writes pseudo labels and provenance next to the sequences.
void save_pseudo_labels(const std::string& dir, const PseudoLabelSet& set);
PseudoLabelSet load_pseudo_labels(
    const std::string& dir, const std::vector<synth::VideoSequence>& seqs);

/// FNV-1a over relative paths and contents of every regular file under
/// dir, in sorted path order; returned as 16 hex digits. Derived artifacts
/// (pseudo labels, the top-level experiment manifest) are excluded so the
/// hash names the rendered dataset itself.
std::string dataset_hash(const std::string& dir);

}  // namespace vseg::pipeline
