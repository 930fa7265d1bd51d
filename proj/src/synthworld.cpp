#include "vseg/synthworld.hpp"
#include "vseg/image_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace vseg::synth {
namespace {

using nlohmann::json;

constexpr double kTextureAmp = 0.12;

struct TextureParams {
  double fx = 0.0, fy = 0.0, phase = 0.0;
};

// Distinct-ish base colors: hue walk with an irrational stride.
void base_color(int class_id, double rgb[3]) {
  const double h = 0.11 + 0.61803398875 * class_id;
  for (int k = 0; k < 3; ++k) {
    rgb[k] = 0.5 + 0.33 * std::sin(2.0 * std::numbers::pi * (h + k / 3.0));
  }
}

double texture_value(const TextureParams& tp, double lx, double ly) {
  return kTextureAmp * std::sin(tp.fx * lx + tp.fy * ly + tp.phase);
}

double quantize8(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::nearbyint(v * 255.0) / 255.0;
}

struct ShapeState {
  const ShapeSpec* spec = nullptr;
  double cx = 0.0, cy = 0.0;  // center at the current frame
};

bool covers(const ShapeState& s, double x, double y) {
  const double hx = x - s.cx, hy = y - s.cy, half = s.spec->size * 0.5;
  if (s.spec->kind == ShapeKind::Rectangle)
    return std::abs(hx) <= half && std::abs(hy) <= half;
  return hx * hx + hy * hy <= half * half;
}

// owner(y,x) = index into spec.shapes of the topmost shape covering the
// pixel center, or -1 for background. Paint order: ascending depth, ties
// broken by declaration order.
Eigen::ArrayXXi owner_map(const SceneSpec& spec,
                          const std::vector<ShapeState>& states) {
  Eigen::ArrayXXi owner =
      Eigen::ArrayXXi::Constant(spec.height, spec.width, -1);
  std::vector<int> order(states.size());
  for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return states[a].spec->depth < states[b].spec->depth;
  });
  for (int idx : order) {
    const ShapeState& s = states[idx];
    const double half = s.spec->size * 0.5;
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - half)));
    const int y1 =
        std::min(spec.height - 1, static_cast<int>(std::ceil(s.cy + half)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - half)));
    const int x1 =
        std::min(spec.width - 1, static_cast<int>(std::ceil(s.cx + half)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (covers(s, x, y)) owner(y, x) = idx;
  }
  return owner;
}

std::vector<ShapeState> states_at(const SceneSpec& spec, int t) {
  std::vector<ShapeState> out(spec.shapes.size());
  for (size_t i = 0; i < spec.shapes.size(); ++i) {
    const ShapeSpec& sh = spec.shapes[i];
    out[i].spec = &sh;
    out[i].cx = sh.start_x + t * (sh.vel_x + spec.pan_x);
    out[i].cy = sh.start_y + t * (sh.vel_y + spec.pan_y);
  }
  return out;
}

std::string frame_name(const char* stem, int t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, t, ext);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 2 || width < 2)
    throw ValidationError("scene dims must be at least 2x2");
  if (num_frames < 1) throw ValidationError("scene needs at least one frame");
  if (num_classes < 1) throw ValidationError("scene needs at least one class");
  if (labeled_stride < 1) throw ValidationError("labeled_stride must be >= 1");
  if (jitter_amplitude < 0.0 || jitter_amplitude > 0.5)
    throw ValidationError("jitter_amplitude must lie in [0, 0.5]");
  if (flow_noise_sigma < 0.0)
    throw ValidationError("flow_noise_sigma must be >= 0");
  for (const ShapeSpec& sh : shapes) {
    if (sh.size <= 0.0) throw ValidationError("shape size must be positive");
    if (sh.class_id < 1 || sh.class_id >= num_classes)
      throw ValidationError("shape class_id out of range [1, num_classes)");
  }
}

VideoSequence render_sequence(const SceneSpec& spec) {
  spec.validate();
  const int H = spec.height, W = spec.width, T = spec.num_frames;

  std::mt19937_64 eng(spec.seed);
  std::uniform_real_distribution<double> freq(0.25, 0.9);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  TextureParams bg_tex{freq(eng), freq(eng), phase(eng)};
  std::vector<TextureParams> shape_tex(spec.shapes.size());
  for (auto& tp : shape_tex) tp = {freq(eng), freq(eng), phase(eng)};
  std::vector<double> jitter(T);
  for (int t = 0; t < T; ++t) jitter[t] = spec.jitter_amplitude * unit(eng);

  VideoSequence seq;
  seq.num_classes = spec.num_classes;
  seq.labeled_stride = spec.labeled_stride;
  seq.frames.reserve(T);
  seq.labels.resize(T);

  std::vector<Eigen::ArrayXXi> owners(T);
  std::vector<std::vector<ShapeState>> states(T);
  for (int t = 0; t < T; ++t) {
    states[t] = states_at(spec, t);
    owners[t] = owner_map(spec, states[t]);
  }

  for (int t = 0; t < T; ++t) {
    Planes frame(3, H, W);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int o = owners[t](y, x);
        double rgb[3];
        double tex;
        if (o < 0) {
          base_color(0, rgb);
          tex = texture_value(bg_tex, x - t * spec.pan_x, y - t * spec.pan_y);
        } else {
          base_color(spec.shapes[o].class_id, rgb);
          tex = texture_value(shape_tex[o], x - states[t][o].cx,
                              y - states[t][o].cy);
        }
        for (int c = 0; c < 3; ++c)
          frame[c](y, x) = quantize8(rgb[c] + tex + jitter[t]);
      }
    }
    seq.frames.push_back(std::move(frame));

    if (t % spec.labeled_stride == 0) {
      LabelMap lab(H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int o = owners[t](y, x);
          lab(y, x) =
              o < 0 ? 0 : static_cast<std::uint8_t>(spec.shapes[o].class_id);
        }
      seq.labels[t] = std::move(lab);
    }
  }

  // True motion of the surface owning pixel (y,x) at frame t.
  auto true_motion = [&](int t, int y, int x, double& mx, double& my) {
    const int o = owners[t](y, x);
    if (o < 0) {
      mx = spec.pan_x;
      my = spec.pan_y;
    } else {
      mx = spec.shapes[o].vel_x + spec.pan_x;
      my = spec.shapes[o].vel_y + spec.pan_y;
    }
  };

  for (int t = 0; t + 1 < T; ++t) {
    FlowField fwd(H, W), back(H, W);
    BinaryMap vis_fwd(H, W), vis_back(H, W);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double mx, my;
        // forward: where does the content under (y,x) at frame t land at t+1
        true_motion(t, y, x, mx, my);
        fwd.u(y, x) = mx;
        fwd.v(y, x) = my;
        const double dx = x + mx, dy = y + my;
        std::uint8_t vis = 0;
        if (dx >= 0.0 && dx <= W - 1 && dy >= 0.0 && dy <= H - 1) {
          const int nx = static_cast<int>(std::llround(dx));
          const int ny = static_cast<int>(std::llround(dy));
          vis = owners[t + 1](ny, nx) == owners[t](y, x) ? 1 : 0;
        }
        vis_fwd(y, x) = vis;

        // backward: where was the content under (y,x) at frame t+1 at time t
        true_motion(t + 1, y, x, mx, my);
        back.u(y, x) = -mx;
        back.v(y, x) = -my;
        const double sx = x - mx, sy = y - my;
        vis = 0;
        if (sx >= 0.0 && sx <= W - 1 && sy >= 0.0 && sy <= H - 1) {
          const int nx = static_cast<int>(std::llround(sx));
          const int ny = static_cast<int>(std::llround(sy));
          vis = owners[t](ny, nx) == owners[t + 1](y, x) ? 1 : 0;
        }
        vis_back(y, x) = vis;
      }
    }
    seq.flows.push_back(std::move(fwd));
    seq.flows_back.push_back(std::move(back));
    seq.gt_occlusion.push_back(std::move(vis_fwd));
    seq.gt_occlusion_back.push_back(std::move(vis_back));
  }

  if (spec.flow_noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.flow_noise_sigma);
    auto perturb = [&](FlowField& f) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          f.u(y, x) += noise(eng);
          f.v(y, x) += noise(eng);
        }
    };
    for (auto& f : seq.flows) perturb(f);
    for (auto& f : seq.flows_back) perturb(f);
  }

  // Freeze to on-disk precision so save/load round trips bit for bit.
  for (auto& f : seq.flows)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        f.u(y, x) = static_cast<double>(static_cast<float>(f.u(y, x)));
        f.v(y, x) = static_cast<double>(static_cast<float>(f.v(y, x)));
      }
  for (auto& f : seq.flows_back)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        f.u(y, x) = static_cast<double>(static_cast<float>(f.u(y, x)));
        f.v(y, x) = static_cast<double>(static_cast<float>(f.v(y, x)));
      }
  return seq;
}

bool operator==(const VideoSequence& a, const VideoSequence& b) {
  if (a.num_classes != b.num_classes || a.labeled_stride != b.labeled_stride)
    return false;
  if (a.frames.size() != b.frames.size() || a.labels.size() != b.labels.size())
    return false;
  if (a.flows.size() != b.flows.size() ||
      a.flows_back.size() != b.flows_back.size())
    return false;
  if (a.gt_occlusion.size() != b.gt_occlusion.size() ||
      a.gt_occlusion_back.size() != b.gt_occlusion_back.size())
    return false;
  auto eq = [](const Array2D& x, const Array2D& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && (x == y).all();
  };
  for (size_t t = 0; t < a.frames.size(); ++t) {
    if (!a.frames[t].same_shape(b.frames[t])) return false;
    for (int c = 0; c < a.frames[t].channels(); ++c)
      if (!eq(a.frames[t][c], b.frames[t][c])) return false;
  }
  for (size_t t = 0; t < a.labels.size(); ++t) {
    if (a.labels[t].has_value() != b.labels[t].has_value()) return false;
    if (a.labels[t] && !(*a.labels[t] == *b.labels[t]).all()) return false;
  }
  for (size_t t = 0; t < a.flows.size(); ++t)
    if (!eq(a.flows[t].u, b.flows[t].u) || !eq(a.flows[t].v, b.flows[t].v))
      return false;
  for (size_t t = 0; t < a.flows_back.size(); ++t)
    if (!eq(a.flows_back[t].u, b.flows_back[t].u) ||
        !eq(a.flows_back[t].v, b.flows_back[t].v))
      return false;
  for (size_t t = 0; t < a.gt_occlusion.size(); ++t)
    if (!(a.gt_occlusion[t] == b.gt_occlusion[t]).all()) return false;
  for (size_t t = 0; t < a.gt_occlusion_back.size(); ++t)
    if (!(a.gt_occlusion_back[t] == b.gt_occlusion_back[t]).all())
      return false;
  return true;
}

namespace {

json scene_to_json(const SceneSpec& spec) {
  json shapes = json::array();
  for (const ShapeSpec& sh : spec.shapes) {
    shapes.push_back({{"kind", sh.kind == ShapeKind::Disc ? "disc" : "rect"},
                      {"class_id", sh.class_id},
                      {"size", sh.size},
                      {"start_x", sh.start_x},
                      {"start_y", sh.start_y},
                      {"vel_x", sh.vel_x},
                      {"vel_y", sh.vel_y},
                      {"depth", sh.depth}});
  }
  return {{"height", spec.height},
          {"width", spec.width},
          {"num_classes", spec.num_classes},
          {"num_frames", spec.num_frames},
          {"jitter_amplitude", spec.jitter_amplitude},
          {"labeled_stride", spec.labeled_stride},
          {"seed", spec.seed},
          {"pan_x", spec.pan_x},
          {"pan_y", spec.pan_y},
          {"flow_noise_sigma", spec.flow_noise_sigma},
          {"shapes", shapes}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  try {
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.num_frames = j.at("num_frames").get<int>();
    spec.jitter_amplitude = j.at("jitter_amplitude").get<double>();
    spec.labeled_stride = j.at("labeled_stride").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.pan_x = j.at("pan_x").get<double>();
    spec.pan_y = j.at("pan_y").get<double>();
    spec.flow_noise_sigma = j.at("flow_noise_sigma").get<double>();
    for (const json& js : j.at("shapes")) {
      ShapeSpec sh;
      const std::string kind = js.at("kind").get<std::string>();
      if (kind == "disc")
        sh.kind = ShapeKind::Disc;
      else if (kind == "rect")
        sh.kind = ShapeKind::Rectangle;
      else
        throw ManifestError("unknown shape kind: " + kind);
      sh.class_id = js.at("class_id").get<int>();
      sh.size = js.at("size").get<double>();
      sh.start_x = js.at("start_x").get<double>();
      sh.start_y = js.at("start_y").get<double>();
      sh.vel_x = js.at("vel_x").get<double>();
      sh.vel_y = js.at("vel_y").get<double>();
      sh.depth = js.at("depth").get<int>();
      spec.shapes.push_back(sh);
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("bad scene block: ") + e.what());
  }
  return spec;
}

json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ManifestError("unparseable manifest " + path.string() + ": " +
                        e.what());
  }
  if (j.value("type", "") != "vseg-sequence")
    throw ManifestError("not a sequence manifest: " + path.string());
  return j;
}

}  // namespace

void save_sequence(const VideoSequence& seq, const SceneSpec& spec,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int T = seq.num_frames();

  json labeled = json::array();
  for (int t = 0; t < T; ++t)
    if (seq.labels[t]) labeled.push_back(t);

  json manifest = {{"type", "vseg-sequence"},
                   {"version", 1},
                   {"height", seq.height()},
                   {"width", seq.width()},
                   {"num_classes", seq.num_classes},
                   {"num_frames", T},
                   {"labeled_stride", seq.labeled_stride},
                   {"labeled_frames", labeled},
                   {"scene", scene_to_json(spec)}};
  std::ofstream out(dir / "manifest.json");
  if (!out)
    throw MissingFileError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";

  for (int t = 0; t < T; ++t) {
    io::write_ppm(dir / frame_name("frame", t, "ppm"), seq.frames[t]);
    if (seq.labels[t])
      io::write_pgm(dir / frame_name("label", t, "pgm"), *seq.labels[t]);
  }
  auto to_mask = [](const BinaryMap& m) {
    return LabelMap((m > 0).cast<std::uint8_t>() * std::uint8_t{255});
  };
  for (int t = 0; t + 1 < T; ++t) {
    io::write_flo(dir / frame_name("flow", t, "flo"), seq.flows[t]);
    io::write_flo(dir / frame_name("flow_back", t, "flo"), seq.flows_back[t]);
    io::write_pgm(dir / frame_name("occ", t, "pgm"),
                  to_mask(seq.gt_occlusion[t]));
    io::write_pgm(dir / frame_name("occ_back", t, "pgm"),
                  to_mask(seq.gt_occlusion_back[t]));
  }
}

VideoSequence load_sequence(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  VideoSequence seq;
  int T = 0, H = 0, W = 0;
  std::vector<int> labeled;
  try {
    T = manifest.at("num_frames").get<int>();
    H = manifest.at("height").get<int>();
    W = manifest.at("width").get<int>();
    seq.num_classes = manifest.at("num_classes").get<int>();
    seq.labeled_stride = manifest.at("labeled_stride").get<int>();
    labeled = manifest.at("labeled_frames").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest missing field: ") + e.what());
  }
  if (T < 1 || H < 1 || W < 1)
    throw ManifestError("manifest declares empty sequence");

  seq.labels.resize(T);
  for (int t = 0; t < T; ++t) {
    Planes fr = io::read_ppm(dir / frame_name("frame", t, "ppm"));
    if (fr.height() != H || fr.width() != W)
      throw DimensionError("frame size disagrees with manifest in " +
                           dir.string());
    seq.frames.push_back(std::move(fr));
  }
  for (int t : labeled) {
    if (t < 0 || t >= T) throw ManifestError("labeled frame index out of range");
    LabelMap lab = io::read_pgm(dir / frame_name("label", t, "pgm"));
    if (lab.rows() != H || lab.cols() != W)
      throw DimensionError("label size disagrees with manifest in " +
                           dir.string());
    seq.labels[t] = std::move(lab);
  }
  auto from_mask = [](const LabelMap& m) {
    return BinaryMap((m > 0).cast<std::uint8_t>());
  };
  for (int t = 0; t + 1 < T; ++t) {
    FlowField f = io::read_flo(dir / frame_name("flow", t, "flo"));
    FlowField b = io::read_flo(dir / frame_name("flow_back", t, "flo"));
    if (f.height() != H || f.width() != W || b.height() != H || b.width() != W)
      throw DimensionError("flow size disagrees with manifest in " +
                           dir.string());
    seq.flows.push_back(std::move(f));
    seq.flows_back.push_back(std::move(b));
    seq.gt_occlusion.push_back(
        from_mask(io::read_pgm(dir / frame_name("occ", t, "pgm"))));
    seq.gt_occlusion_back.push_back(
        from_mask(io::read_pgm(dir / frame_name("occ_back", t, "pgm"))));
  }
  return seq;
}

SceneSpec load_scene_spec(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  if (!manifest.contains("scene"))
    throw ManifestError("manifest has no scene block: " +
                        (dir / "manifest.json").string());
  return scene_from_json(manifest.at("scene"));
}

}  // namespace vseg::synth
