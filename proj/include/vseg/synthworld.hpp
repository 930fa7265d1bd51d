#pragma once

#include "vseg/types.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace vseg::synth {

enum class ShapeKind { Rectangle, Disc };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Rectangle;
  int class_id = 1;
  double size = 8.0;  // edge length for rectangles, diameter for discs
  double start_x = 0.0;
  double start_y = 0.0;
  double vel_x = 0.0;
  double vel_y = 0.0;
  int depth = 1;  // higher occludes lower; background is below everything
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 2;  // background is class 0
  std::vector<ShapeSpec> shapes;
  int num_frames = 2;
  double jitter_amplitude = 0.0;  // global per-frame brightness, in [0,1]
  int labeled_stride = 1;         // every Nth frame carries a label
  std::uint64_t seed = 0;
  double pan_x = 0.0;  // uniform camera pan per frame, applied to everything
  double pan_y = 0.0;
  double flow_noise_sigma = 0.0;  // optional noise on stored flow only

  void validate() const;
};

/// Frames, labels, both flow directions and both visibility masks for a
/// rendered clip. flows[t] is anchored at frame t and points to t+1;
/// flows_back[t] is anchored at frame t+1 and points back to t.
/// gt_occlusion[t](p) = 1 iff pixel p of frame t is still visible at t+1;
/// gt_occlusion_back[t](p) = 1 iff pixel p of frame t+1 was visible at t.
struct VideoSequence {
  int num_classes = 0;
  int labeled_stride = 1;
  std::vector<Planes> frames;
  std::vector<std::optional<LabelMap>> labels;
  std::vector<FlowField> flows;
  std::vector<FlowField> flows_back;
  std::vector<BinaryMap> gt_occlusion;
  std::vector<BinaryMap> gt_occlusion_back;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames[0].height(); }
  int width() const { return frames.empty() ? 0 : frames[0].width(); }
};

bool operator==(const VideoSequence& a, const VideoSequence& b);

/// Deterministic renderer. Color = class base color + per-shape texture
/// (in shape-local coordinates, so it moves with the shape) + global
/// per-frame brightness jitter. Output colors are quantized to the 8-bit
/// grid and flows to float32 so on-disk round trips are exact.
VideoSequence render_sequence(const SceneSpec& spec);

void save_sequence(const VideoSequence& seq, const SceneSpec& spec,
                   const std::filesystem::path& dir);
VideoSequence load_sequence(const std::filesystem::path& dir);
SceneSpec load_scene_spec(const std::filesystem::path& dir);

}  // namespace vseg::synth
