#include "vseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "vseg/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vseg::pipeline {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (batch_size < 1)
    throw ValidationError("train config: batch_size must be >= 1");
  if (steps_per_epoch < 0)
    throw ValidationError("train config: steps_per_epoch must be >= 0");
  if (!(base_lr > 0)) throw ValidationError("train config: base_lr <= 0");
  if (momentum < 0 || momentum >= 1)
    throw ValidationError("train config: momentum outside [0,1)");
  if (!(poly_power > 0)) throw ValidationError("train config: poly power");
  if (lambda_reg < 0 || teacher_tl_weight < 0)
    throw ValidationError("train config: negative loss weight");
  if (frame_gap < 1) throw ValidationError("train config: frame_gap < 1");
  if (window < 1) throw ValidationError("train config: window < 1");
  if (!(rho >= 0) || !std::isfinite(rho))
    throw ValidationError("train config: rho must be finite and >= 0");
  if (pseudo_threshold < 0 || pseudo_threshold > 1)
    throw ValidationError("train config: pseudo_threshold outside [0,1]");
  if (pool_size < 1) throw ValidationError("train config: pool_size < 1");
}

SchemeSwitches scheme_switches(char scheme) {
  switch (scheme) {
    case 'a': return {};
    case 'b': return {false, true, false, false};
    case 'c': return {false, false, true, false};
    case 'd': return {false, true, true, false};
    case 'e': return {true, false, false, false};
    case 'f': return {true, true, true, false};
    case 'j': return {false, false, false, true};
    case 'k': return {true, false, false, true};
    case 'l': return {true, true, true, true};
    default:
      throw ValidationError(std::string("unknown ablation scheme '") + scheme +
                            "'");
  }
}

void append_log_csv(const std::string& path, const std::vector<LogRow>& rows) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw MissingFileError("cannot write " + path);
  if (fresh) out << "epoch,step,ce,tl,pf,mf,total,lr\n";
  char buf[256];
  for (const LogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.epoch, r.step, r.ce, r.tl, r.pf, r.mf, r.total, r.lr);
    out << buf;
  }
}

double poly_lr(double base, int iter, int max_iter, double power) {
  if (max_iter < 1) throw ValidationError("poly_lr: max_iter must be >= 1");
  const double frac = std::min(iter, max_iter - 1) / (double)max_iter;
  return base * std::pow(1.0 - frac, power);
}

bool MixedDataset::draws_pseudo(std::mt19937_64& rng) const {
  if (pseudo_only) return true;
  if (rho == 0.0 || pseudo_centers.empty()) return false;
  if (gt_centers.empty()) return true;
  std::bernoulli_distribution pick(rho / (1.0 + rho));
  return pick(rng);
}

CenterRef MixedDataset::draw_center(std::mt19937_64& rng) const {
  const auto& pool = draws_pseudo(rng) ? pseudo_centers : gt_centers;
  if (pool.empty()) throw ValidationError("mixed dataset: no centers to draw");
  std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

MixedDataset combine_datasets(const std::vector<synth::VideoSequence>& seqs,
                              const PseudoLabelSet* pseudo, double rho,
                              bool pseudo_only) {
  if (!(rho >= 0) || !std::isfinite(rho))
    throw ValidationError("combine_datasets: rho must be finite and >= 0");
  if (pseudo) {
    if (pseudo->labels.size() != seqs.size() ||
        pseudo->provenance.size() != seqs.size())
      throw DimensionError("combine_datasets: pseudo set shape mismatch");
  }
  MixedDataset m;
  m.sequences = &seqs;
  m.rho = rho;
  m.pseudo_only = pseudo_only;
  for (size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    if (pseudo && (int)pseudo->labels[s].size() != seq.num_frames())
      throw DimensionError("combine_datasets: pseudo set shape mismatch");
    std::vector<const LabelMap*> labs(seq.num_frames(), nullptr);
    std::vector<Provenance> prov(seq.num_frames(), Provenance::pseudo);
    for (int t = 0; t < seq.num_frames(); ++t) {
      if (seq.labels[t]) {
        labs[t] = &*seq.labels[t];  // ground truth always wins
        prov[t] = Provenance::ground_truth;
      } else if (pseudo && pseudo->labels[s][t]) {
        labs[t] = &*pseudo->labels[s][t];
        prov[t] = Provenance::pseudo;
      }
      if (labs[t] && t + 1 < seq.num_frames()) {
        auto& pool = prov[t] == Provenance::ground_truth ? m.gt_centers
                                                         : m.pseudo_centers;
        pool.push_back({(int)s, t});
      }
    }
    m.labels.push_back(std::move(labs));
    m.provenance.push_back(std::move(prov));
  }
  if (pseudo_only) {
    if (m.pseudo_centers.empty())
      throw ValidationError("combine_datasets: no pseudo centers");
  } else if (pseudo && rho > 0.0) {
    if (m.gt_centers.empty() || m.pseudo_centers.empty())
      throw ValidationError(
          "combine_datasets: mixing needs both labeled and pseudo centers");
  } else if (m.gt_centers.empty()) {
    throw ValidationError("combine_datasets: no labeled centers");
  }
  return m;
}

TrainingTriplet sample_triplet(const synth::VideoSequence& seq, int center,
                               int window, std::mt19937_64& rng) {
  if (window < 1) throw ValidationError("sample_triplet: window < 1");
  if (center < 0 || center >= seq.num_frames())
    throw ValidationError("sample_triplet: center out of range");
  if (center + 1 >= seq.num_frames())
    throw ValidationError("sample_triplet: center has no successor frame");
  TrainingTriplet t;
  t.frame_c = center;
  t.frame_b = center + 1;
  if (center == 0) {
    t.frame_f = 0;
    t.degenerate_f = true;
  } else {
    const int lo = std::max(0, center - window);
    std::uniform_int_distribution<int> d(lo, center - 1);
    t.frame_f = d(rng);
  }
  return t;
}

namespace {

// momentum SGD; velocity buffers are keyed by parameter name
struct Sgd {
  double momentum;
  std::map<std::string, Eigen::MatrixXd> vel;

  template <class VisitAll>
  void step(VisitAll&& visit_all, double lr) {
    visit_all([&](const std::string& name, Eigen::MatrixXd& p,
                  Eigen::MatrixXd& g) {
      auto& v = vel[name];
      if (v.size() == 0) v = Eigen::MatrixXd::Zero(p.rows(), p.cols());
      v = momentum * v + g;
      p -= lr * v;
    });
  }
};

losses::Triplet teacher_pair(const synth::VideoSequence& seq, int c) {
  losses::Triplet tr;
  const LabelMap* lab_c = seq.labels[c] ? &*seq.labels[c] : nullptr;
  tr.frames[0] = {seq.frames[c], nullptr};
  tr.frames[1] = {seq.frames[c], lab_c};
  if (c + 1 < seq.num_frames()) {
    const LabelMap* lab_n = seq.labels[c + 1] ? &*seq.labels[c + 1] : nullptr;
    tr.frames[2] = {seq.frames[c + 1], lab_n};
    tr.flow_mid_to_next = &seq.flows[c];
    tr.consecutive = true;
  } else {
    tr.frames[2] = {seq.frames[c], nullptr};
    tr.consecutive = false;
  }
  return tr;
}

}  // namespace

nets::SegNet train_teacher(const std::vector<synth::VideoSequence>& seqs,
                           const nets::SegNetConfig& arch,
                           const TrainConfig& cfg, std::vector<LogRow>* log) {
  cfg.validate();
  std::vector<CenterRef> sites;
  for (size_t s = 0; s < seqs.size(); ++s)
    for (int t = 0; t < seqs[s].num_frames(); ++t)
      if (seqs[s].labels[t]) sites.push_back({(int)s, t});
  if (sites.empty()) throw ValidationError("train_teacher: no labeled frames");

  nets::SegNet net(arch);
  Sgd opt{cfg.momentum, {}};
  std::mt19937_64 rng(cfg.seed);
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : (int)((sites.size() + cfg.batch_size - 1) /
                                cfg.batch_size);
  const int max_iter = cfg.epochs * steps;
  const losses::LossWeights w{cfg.teacher_tl_weight, cfg.frame_gap};
  const losses::LossSwitches sw{true, false, false};
  losses::ModelBundle models{&net, nullptr, nullptr};

  int iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(sites.begin(), sites.end(), rng);
    size_t cursor = 0;
    for (int step = 0; step < steps; ++step) {
      std::vector<losses::Triplet> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const CenterRef site = sites[cursor++ % sites.size()];
        batch.push_back(teacher_pair(seqs[site.sequence_id], site.frame));
      }
      net.zero_grad();
      const losses::LossTerms terms =
          losses::combined_loss(batch, models, sw, w, cfg.pool_size, true);
      const double lr = poly_lr(cfg.base_lr, iter, max_iter, cfg.poly_power);
      opt.step([&](const nets::ParamVisitor& v) { net.visit_params(v); }, lr);
      if (log)
        log->push_back({epoch, step, terms.ce, terms.tl, terms.pf, terms.mf,
                        terms.total(cfg.teacher_tl_weight), lr});
      ++iter;
    }
  }
  return net;
}

PseudoLabelSet generate_pseudo_labels(
    const nets::SegNet& teacher, const std::vector<synth::VideoSequence>& seqs,
    const TtaSpec& tta, double threshold) {
  if (tta.scales.empty())
    throw ValidationError("pseudo labels: need at least one scale");
  for (double s : tta.scales)
    if (!(s > 0)) throw ValidationError("pseudo labels: scales must be > 0");

  PseudoLabelSet out;
  for (const auto& seq : seqs) {
    const int H = seq.height(), W = seq.width();
    std::vector<std::optional<LabelMap>> labs(seq.num_frames());
    std::vector<Provenance> prov(seq.num_frames(), Provenance::pseudo);
    for (int t = 0; t < seq.num_frames(); ++t) {
      if (seq.labels[t]) {
        prov[t] = Provenance::ground_truth;  // never overwritten
        continue;
      }
      const nets::FeatureMap x = nets::from_planes(seq.frames[t]);
      nets::FeatureMap sum;
      int count = 0;
      for (double scale : tta.scales) {
        const int oh = (int)(2 * std::llround(H * scale / 2.0));
        const int ow = (int)(2 * std::llround(W * scale / 2.0));
        if (oh < 8 || ow < 8)
          throw ValidationError("pseudo labels: scale shrinks below 8 px");
        const nets::FeatureMap xs =
            (oh == H && ow == W) ? x : nets::resize_bilinear(x, oh, ow);
        const int flips = tta.flips ? 2 : 1;
        for (int f = 0; f < flips; ++f) {
          const nets::FeatureMap xi = f ? nets::hflip(xs) : xs;
          nets::FeatureMap q = nets::softmax(teacher.infer(xi).first);
          if (f) q = nets::hflip(q);
          if (oh != H || ow != W) q = nets::resize_bilinear(q, H, W);
          if (count == 0)
            sum = q;
          else
            sum.data += q.data;
          ++count;
        }
      }
      sum.data /= count;
      LabelMap lab(H, W);
      for (int p = 0; p < H * W; ++p) {
        Eigen::Index best;
        const double peak = sum.data.col(p).maxCoeff(&best);
        lab(p / W, p % W) =
            peak < threshold ? kIgnoreIndex : (std::uint8_t)best;
      }
      labs[t] = std::move(lab);
    }
    out.labels.push_back(std::move(labs));
    out.provenance.push_back(std::move(prov));
  }
  return out;
}

nets::SegNet train_student(const MixedDataset& data,
                           const nets::SegNet& teacher,
                           const nets::SegNetConfig& student_arch,
                           const nets::EmbedHeadConfig* head_cfg,
                           const TrainConfig& cfg, const SchemeSwitches& sw,
                           std::vector<LogRow>* log,
                           nets::EmbedHead* head_out) {
  cfg.validate();
  if (!data.sequences)
    throw ValidationError("train_student: dataset not initialized");
  if (sw.mf && !head_cfg)
    throw ValidationError("train_student: mf needs the embedding head");

  nets::SegNet student(student_arch);
  std::unique_ptr<nets::EmbedHead> head;
  if (sw.mf) head = std::make_unique<nets::EmbedHead>(*head_cfg);

  const size_t center_count =
      data.pseudo_only
          ? data.pseudo_centers.size()
          : data.gt_centers.size() +
                (data.rho > 0 ? data.pseudo_centers.size() : 0);
  if (center_count == 0)
    throw ValidationError("train_student: no triplet centers");

  Sgd opt_s{cfg.momentum, {}}, opt_h{cfg.momentum, {}};
  std::mt19937_64 rng(cfg.seed);
  const int steps =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : (int)((center_count + cfg.batch_size - 1) / cfg.batch_size);
  const int max_iter = cfg.epochs * steps;
  const losses::LossWeights w{cfg.lambda_reg, cfg.frame_gap};
  const losses::LossSwitches lsw{sw.tl, sw.pf, sw.mf};
  losses::ModelBundle models{&student, &teacher, head.get()};

  int iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < steps; ++step) {
      std::vector<losses::Triplet> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const CenterRef c = data.draw_center(rng);
        const auto& seq = (*data.sequences)[c.sequence_id];
        const TrainingTriplet t3 =
            sample_triplet(seq, c.frame, cfg.window, rng);
        losses::Triplet tr;
        const auto& labs = data.labels[c.sequence_id];
        tr.frames[0] = {seq.frames[t3.frame_f], labs[t3.frame_f]};
        tr.frames[1] = {seq.frames[t3.frame_c], labs[t3.frame_c]};
        tr.frames[2] = {seq.frames[t3.frame_b], labs[t3.frame_b]};
        tr.flow_mid_to_next = &seq.flows[t3.frame_c];
        tr.consecutive = true;
        batch.push_back(std::move(tr));
      }
      student.zero_grad();
      if (head) head->zero_grad();
      const losses::LossTerms terms =
          losses::combined_loss(batch, models, lsw, w, cfg.pool_size, true);
      const double lr = poly_lr(cfg.base_lr, iter, max_iter, cfg.poly_power);
      opt_s.step([&](const nets::ParamVisitor& v) { student.visit_params(v); },
                 lr);
      if (head) {
        opt_h.step([&](const nets::ParamVisitor& v) { head->visit_params(v); },
                   lr);
        head->clip_recurrent_params();
      }
      if (log)
        log->push_back({epoch, step, terms.ce, terms.tl, terms.pf, terms.mf,
                        terms.total(cfg.lambda_reg), lr});
      ++iter;
    }
  }
  if (head_out && head) *head_out = *head;
  return student;
}

// ---- dataset on disk -------------------------------------------------

void DatasetSpec::validate() const {
  if (count < 1) throw ValidationError("dataset spec: count must be >= 1");
  if (height < 2 || width < 2)
    throw ValidationError("dataset spec: dims must be >= 2");
  if (num_classes < 2)
    throw ValidationError("dataset spec: need at least two classes");
  if (num_frames < 2)
    throw ValidationError("dataset spec: need at least two frames");
  if (labeled_stride < 1) throw ValidationError("dataset spec: stride < 1");
  if (jitter < 0 || jitter > 0.5)
    throw ValidationError("dataset spec: jitter outside [0, 0.5]");
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw ValidationError("dataset spec: bad shape-count range");
  if (!(min_size > 0) || max_size < min_size)
    throw ValidationError("dataset spec: bad size range");
  if (max_speed < 0) throw ValidationError("dataset spec: max_speed < 0");
  if (max_pan < 0) throw ValidationError("dataset spec: max_pan < 0");
  if (flow_noise_sigma < 0)
    throw ValidationError("dataset spec: flow_noise_sigma < 0");
}

DatasetSpec load_dataset_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  DatasetSpec s;
  try {
    s.count = j.value("count", s.count);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.num_frames = j.value("num_frames", s.num_frames);
    s.labeled_stride = j.value("labeled_stride", s.labeled_stride);
    s.jitter = j.value("jitter", s.jitter);
    s.min_shapes = j.value("min_shapes", s.min_shapes);
    s.max_shapes = j.value("max_shapes", s.max_shapes);
    s.min_size = j.value("min_size", s.min_size);
    s.max_size = j.value("max_size", s.max_size);
    s.max_speed = j.value("max_speed", s.max_speed);
    s.max_pan = j.value("max_pan", s.max_pan);
    s.flow_noise_sigma = j.value("flow_noise_sigma", s.flow_noise_sigma);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  s.validate();
  return s;
}

std::vector<synth::SceneSpec> make_scene_specs(const DatasetSpec& spec) {
  spec.validate();
  std::vector<synth::SceneSpec> scenes;
  for (int i = 0; i < spec.count; ++i) {
    std::mt19937_64 rng(spec.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    synth::SceneSpec sc;
    sc.height = spec.height;
    sc.width = spec.width;
    sc.num_classes = spec.num_classes;
    sc.num_frames = spec.num_frames;
    sc.labeled_stride = spec.labeled_stride;
    sc.jitter_amplitude = spec.jitter;
    sc.flow_noise_sigma = spec.flow_noise_sigma;
    sc.seed = (std::uint64_t)rng();
    std::uniform_int_distribution<int> n_shapes(spec.min_shapes,
                                                spec.max_shapes);
    std::uniform_int_distribution<int> cls(1, spec.num_classes - 1);
    std::uniform_real_distribution<double> size(spec.min_size, spec.max_size);
    std::uniform_int_distribution<int> vel(-spec.max_speed, spec.max_speed);
    std::uniform_int_distribution<int> coin(0, 1);
    const int n = n_shapes(rng);
    for (int k = 0; k < n; ++k) {
      synth::ShapeSpec sh;
      sh.kind = coin(rng) ? synth::ShapeKind::Disc
                          : synth::ShapeKind::Rectangle;
      sh.class_id = cls(rng);
      sh.size = size(rng);
      const double mx = sh.size / 2.0;
      std::uniform_real_distribution<double> px(mx, spec.width - 1 - mx);
      std::uniform_real_distribution<double> py(mx, spec.height - 1 - mx);
      sh.start_x = px(rng);
      sh.start_y = py(rng);
      sh.vel_x = vel(rng);
      sh.vel_y = vel(rng);
      if (sh.vel_x == 0 && sh.vel_y == 0)
        sh.vel_x = coin(rng) ? 1 : -1;  // keep every shape moving
      sh.depth = k + 1;
      sc.shapes.push_back(sh);
    }
    if (spec.max_pan > 0) {
      std::uniform_real_distribution<double> pan(-spec.max_pan, spec.max_pan);
      sc.pan_x = pan(rng);
      sc.pan_y = pan(rng);
    }
    sc.validate();
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

namespace {

std::string seq_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03d", i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir,
                  const std::vector<synth::SceneSpec>& scenes) {
  if (scenes.empty()) throw ValidationError("save_dataset: no scenes");
  fs::create_directories(dir);
  for (size_t i = 0; i < scenes.size(); ++i) {
    const synth::VideoSequence seq = synth::render_sequence(scenes[i]);
    synth::save_sequence(seq, scenes[i], dir + "/" + seq_dir_name((int)i));
  }
  json j;
  j["type"] = "vseg-dataset";
  j["version"] = 1;
  j["count"] = scenes.size();
  std::ofstream out(dir + "/dataset.json");
  if (!out) throw MissingFileError("cannot write " + dir + "/dataset.json");
  out << j.dump(2) << "\n";
}

std::vector<synth::VideoSequence> load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/dataset.json");
  if (!in) throw MissingFileError("cannot open " + dir + "/dataset.json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ManifestError(dir + "/dataset.json: " + e.what());
  }
  if (j.value("type", "") != "vseg-dataset")
    throw ManifestError(dir + ": not a dataset directory");
  const int count = j.value("count", -1);
  if (count < 1) throw ManifestError(dir + ": bad sequence count");
  std::vector<synth::VideoSequence> seqs;
  for (int i = 0; i < count; ++i)
    seqs.push_back(synth::load_sequence(dir + "/" + seq_dir_name(i)));
  return seqs;
}

void save_pseudo_labels(const std::string& dir, const PseudoLabelSet& set) {
  json prov = json::array();
  for (size_t s = 0; s < set.labels.size(); ++s) {
    json row = json::array();
    for (size_t t = 0; t < set.labels[s].size(); ++t) {
      if (set.labels[s][t]) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "/pseudo_%03d.pgm", (int)t);
        io::write_pgm(dir + "/" + seq_dir_name((int)s) + buf,
                      *set.labels[s][t]);
      }
      row.push_back(set.provenance[s][t] == Provenance::ground_truth
                        ? "ground_truth"
                        : "pseudo");
    }
    prov.push_back(row);
  }
  json j;
  j["type"] = "vseg-pseudo";
  j["version"] = 1;
  j["provenance"] = prov;
  std::ofstream out(dir + "/pseudo.json");
  if (!out) throw MissingFileError("cannot write " + dir + "/pseudo.json");
  out << j.dump(2) << "\n";
}

PseudoLabelSet load_pseudo_labels(
    const std::string& dir, const std::vector<synth::VideoSequence>& seqs) {
  std::ifstream in(dir + "/pseudo.json");
  if (!in) throw MissingFileError("cannot open " + dir + "/pseudo.json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ManifestError(dir + "/pseudo.json: " + e.what());
  }
  if (j.value("type", "") != "vseg-pseudo")
    throw ManifestError(dir + ": not a pseudo-label set");
  const auto& prov = j.at("provenance");
  if (prov.size() != seqs.size())
    throw DimensionError(dir + ": pseudo set covers wrong sequence count");
  PseudoLabelSet set;
  for (size_t s = 0; s < seqs.size(); ++s) {
    if ((int)prov[s].size() != seqs[s].num_frames())
      throw DimensionError(dir + ": pseudo set covers wrong frame count");
    std::vector<std::optional<LabelMap>> labs(seqs[s].num_frames());
    std::vector<Provenance> pr(seqs[s].num_frames(), Provenance::pseudo);
    for (int t = 0; t < seqs[s].num_frames(); ++t) {
      const std::string kind = prov[s][t];
      if (kind == "ground_truth") {
        pr[t] = Provenance::ground_truth;
      } else if (kind == "pseudo") {
        char buf[32];
        std::snprintf(buf, sizeof buf, "/pseudo_%03d.pgm", t);
        labs[t] = io::read_pgm(dir + "/" + seq_dir_name((int)s) + buf);
        if ((int)labs[t]->rows() != seqs[s].height() ||
            (int)labs[t]->cols() != seqs[s].width())
          throw DimensionError(dir + ": pseudo label shape mismatch");
      } else {
        throw ManifestError(dir + ": bad provenance entry '" + kind + "'");
      }
    }
    set.labels.push_back(std::move(labs));
    set.provenance.push_back(std::move(pr));
  }
  return set;
}

std::string dataset_hash(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw MissingFileError("dataset_hash: no directory " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    // derived artifacts (pseudo labels, experiment manifests) do not change
    // the identity of the rendered dataset
    const std::string base = entry.path().filename().string();
    if (rel == "manifest.json" || base == "pseudo.json" ||
        base.rfind("pseudo_", 0) == 0)
      continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());

  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&](const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= (unsigned char)data[i];
      h *= 1099511628211ULL;
    }
  };
  for (const std::string& rel : files) {
    mix(rel.data(), rel.size());
    mix("\0", 1);
    std::ifstream in(fs::path(dir) / rel, std::ios::binary);
    if (!in) throw MissingFileError("dataset_hash: cannot read " + rel);
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
      mix(buf, (size_t)in.gcount());
  }
  char out[32];
  std::snprintf(out, sizeof out, "%016llx", (unsigned long long)h);
  return out;
}

}  // namespace vseg::pipeline
