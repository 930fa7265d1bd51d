#include "vseg/eval.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vseg/warp.hpp"

namespace vseg::eval {

namespace {

constexpr int kMaxLabel = 256;  // labels are bytes

// per-class intersection / union of q_t against the warped previous map,
// restricted to valid pixels; shared by tc_pair and the report table
void tc_accumulate(const LabelMap& q_t, const LabelMap& warped,
                   const BinaryMap& valid, std::array<double, kMaxLabel>& inter,
                   std::array<double, kMaxLabel>& uni) {
  for (int y = 0; y < q_t.rows(); ++y)
    for (int x = 0; x < q_t.cols(); ++x) {
      if (!valid(y, x)) continue;
      const int a = q_t(y, x), b = warped(y, x);
      if (a == kIgnoreIndex || b == kIgnoreIndex) continue;
      if (a == b) {
        inter[a] += 1.0;
        uni[a] += 1.0;
      } else {
        uni[a] += 1.0;
        uni[b] += 1.0;
      }
    }
}

double iou_mean(const std::array<double, kMaxLabel>& inter,
                const std::array<double, kMaxLabel>& uni) {
  double sum = 0;
  int n = 0;
  for (int c = 0; c < kMaxLabel; ++c) {
    if (c == kIgnoreIndex || uni[c] == 0.0) continue;
    sum += inter[c] / uni[c];
    ++n;
  }
  return n > 0 ? sum / n : 1.0;  // no valid pixels: vacuous agreement
}

void check_same_label_shape(const LabelMap& a, const LabelMap& b,
                            const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(where) + ": label map shapes differ");
}

}  // namespace

MiouResult miou(const std::vector<LabelMap>& preds,
                const std::vector<LabelMap>& gts, int num_classes) {
  if (preds.size() != gts.size())
    throw DimensionError("miou: frame counts differ");
  if (num_classes < 1) throw ValidationError("miou: num_classes must be >= 1");

  Eigen::MatrixXd cm = Eigen::MatrixXd::Zero(num_classes, num_classes);
  for (size_t f = 0; f < preds.size(); ++f) {
    check_same_label_shape(preds[f], gts[f], "miou");
    for (int y = 0; y < gts[f].rows(); ++y)
      for (int x = 0; x < gts[f].cols(); ++x) {
        const int g = gts[f](y, x);
        if (g == kIgnoreIndex) continue;
        const int p = preds[f](y, x);
        if (g >= num_classes || p >= num_classes)
          throw ValidationError("miou: label out of range");
        cm(g, p) += 1.0;
      }
  }
  const double total = cm.sum();
  if (total == 0.0) throw ValidationError("miou: nothing to evaluate");

  MiouResult res;
  res.pixel_accuracy = cm.trace() / total;
  double sum = 0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    PerClassRow row;
    row.class_id = c;
    const double uni = cm.row(c).sum() + cm.col(c).sum() - cm(c, c);
    if (uni > 0.0) {
      row.iou = cm(c, c) / uni;
      row.iou_valid = true;
      sum += row.iou;
      ++n;
    }
    res.per_class.push_back(row);
  }
  res.miou = sum / n;  // n >= 1 because total > 0
  return res;
}

double tc_pair(const LabelMap& q_t, const LabelMap& q_tm1,
               const FlowField& flow, const BinaryMap* gt_visible) {
  check_same_label_shape(q_t, q_tm1, "tc_pair");
  if (flow.height() != (int)q_t.rows() || flow.width() != (int)q_t.cols())
    throw DimensionError("tc_pair: flow shape mismatch");
  const LabelMap warped = warp::backward_warp_nearest(q_tm1, flow);
  BinaryMap valid = warp::valid_mask(flow);
  if (gt_visible) {
    if (gt_visible->rows() != q_t.rows() || gt_visible->cols() != q_t.cols())
      throw DimensionError("tc_pair: visibility mask shape mismatch");
    valid = valid.min(*gt_visible);
  }
  std::array<double, kMaxLabel> inter{}, uni{};
  tc_accumulate(q_t, warped, valid, inter, uni);
  return iou_mean(inter, uni);
}

TcResult tc_sequence(const std::vector<LabelMap>& preds,
                     const std::vector<FlowField>& flows,
                     const std::vector<BinaryMap>* occlusion) {
  if (preds.size() < 2)
    throw ValidationError("tc_sequence: need at least two frames");
  if (flows.size() + 1 != preds.size())
    throw DimensionError("tc_sequence: need one flow per frame pair");
  if (occlusion && occlusion->size() != flows.size())
    throw DimensionError("tc_sequence: need one visibility mask per pair");

  TcResult res;
  for (size_t i = 0; i + 1 < preds.size(); ++i) {
    const BinaryMap* vis = occlusion ? &(*occlusion)[i] : nullptr;
    res.per_pair.push_back(tc_pair(preds[i + 1], preds[i], flows[i], vis));
    res.tc += res.per_pair.back();
  }
  res.tc /= res.per_pair.size();
  return res;
}

LabelMap predict_labels(const nets::SegNet& net, const Planes& image) {
  const auto [logits, feature] = net.infer(nets::from_planes(image));
  LabelMap out(logits.height, logits.width);
  for (int p = 0; p < logits.pixels(); ++p) {
    Eigen::Index best;
    logits.data.col(p).maxCoeff(&best);
    out(p / logits.width, p % logits.width) = (std::uint8_t)best;
  }
  return out;
}

MetricReport evaluate_predictions(
    const std::vector<synth::VideoSequence>& sequences,
    const std::vector<std::vector<LabelMap>>& preds,
    const std::vector<int>& sampled_ids) {
  if (sequences.empty()) throw ValidationError("evaluate: no sequences");
  if (preds.size() != sequences.size())
    throw DimensionError("evaluate: one prediction list per sequence");
  if (sampled_ids.empty())
    throw ValidationError("evaluate: empty evaluation subset");
  const int K = sequences[0].num_classes;
  for (const auto& s : sequences)
    if (s.num_classes != K)
      throw ValidationError("evaluate: inconsistent class counts");
  for (int id : sampled_ids)
    if (id < 0 || id >= (int)sequences.size())
      throw ValidationError("evaluate: sampled id out of range");

  // accuracy over every labeled frame of every sequence
  std::vector<LabelMap> flat_preds, flat_gts;
  for (size_t s = 0; s < sequences.size(); ++s) {
    if ((int)preds[s].size() != sequences[s].num_frames())
      throw DimensionError("evaluate: one prediction per frame");
    for (int t = 0; t < sequences[s].num_frames(); ++t)
      if (sequences[s].labels[t]) {
        flat_preds.push_back(preds[s][t]);
        flat_gts.push_back(*sequences[s].labels[t]);
      }
  }
  MiouResult acc = miou(flat_preds, flat_gts, K);

  MetricReport rep;
  rep.miou = acc.miou;
  rep.pixel_accuracy = acc.pixel_accuracy;
  rep.per_class = acc.per_class;

  // temporal consistency over the fixed subset, ground-truth flow and
  // visibility; per-class numbers are accumulated globally
  std::array<double, kMaxLabel> inter{}, uni{};
  double tc_sum = 0;
  for (size_t k = 0; k < sampled_ids.size(); ++k) {
    const auto& seq = sequences[sampled_ids[k]];
    const auto& p = preds[sampled_ids[k]];
    TcResult r = tc_sequence(p, seq.flows_back, &seq.gt_occlusion_back);
    tc_sum += r.tc;
    if (k == 0) rep.per_pair_tc = r.per_pair;
    for (size_t i = 0; i + 1 < p.size(); ++i) {
      const LabelMap warped =
          warp::backward_warp_nearest(p[i], seq.flows_back[i]);
      BinaryMap valid = warp::valid_mask(seq.flows_back[i]);
      valid = valid.min(seq.gt_occlusion_back[i]);
      tc_accumulate(p[i + 1], warped, valid, inter, uni);
    }
  }
  rep.tc = tc_sum / sampled_ids.size();
  for (auto& row : rep.per_class)
    if (row.class_id < kMaxLabel && uni[row.class_id] > 0.0) {
      row.tc = inter[row.class_id] / uni[row.class_id];
      row.tc_valid = true;
    }
  return rep;
}

MetricReport evaluate_model(const nets::SegNet& net,
                            const std::vector<synth::VideoSequence>& sequences,
                            const std::vector<int>& sampled_ids) {
  std::vector<std::vector<LabelMap>> preds;
  for (const auto& seq : sequences) {
    std::vector<LabelMap> p;
    for (const auto& frame : seq.frames)
      p.push_back(predict_labels(net, frame));
    preds.push_back(std::move(p));
  }
  return evaluate_predictions(sequences, preds, sampled_ids);
}

void save_id_list(const std::string& path, const std::vector<int>& ids) {
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write " + path);
  for (int id : ids) out << id << "\n";
}

std::vector<int> load_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path);
  std::vector<int> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    int v;
    if (ss >> v) {
      ids.push_back(v);
      std::string rest;
      if (ss >> rest) throw FormatError(path + ": trailing data on id line");
    } else if (!line.empty() && line.find_first_not_of(" \t\r") !=
                                    std::string::npos) {
      throw FormatError(path + ": bad id line '" + line + "'");
    }
  }
  return ids;
}

void write_report_csv(const std::string& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write " + path);
  out << "key,index,value\n";
  char buf[64];
  auto emit = [&](const char* key, const std::string& idx, double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    out << key << "," << idx << "," << buf << "\n";
  };
  emit("miou", "", report.miou);
  emit("pixel_accuracy", "", report.pixel_accuracy);
  emit("tc", "", report.tc);
  for (const auto& row : report.per_class) {
    const std::string idx = std::to_string(row.class_id);
    if (row.iou_valid) emit("class_iou", idx, row.iou);
    if (row.tc_valid) emit("class_tc", idx, row.tc);
  }
  for (size_t i = 0; i < report.per_pair_tc.size(); ++i)
    emit("pair_tc", std::to_string(i), report.per_pair_tc[i]);
}

std::string render_report(const MetricReport& report) {
  std::ostringstream out;
  char buf[64];
  auto cell = [&](double v, bool valid) -> std::string {
    if (!valid) return "       -";
    std::snprintf(buf, sizeof buf, "%8.4f", v);
    return buf;
  };
  out << "  class       iou        tc\n";
  for (const auto& row : report.per_class) {
    std::snprintf(buf, sizeof buf, "%7d", row.class_id);
    out << buf << "  " << cell(row.iou, row.iou_valid) << "  "
        << cell(row.tc, row.tc_valid) << "\n";
  }
  std::snprintf(buf, sizeof buf,
                "   mean  miou %.4f  pixel_accuracy %.4f  tc %.4f\n",
                report.miou, report.pixel_accuracy, report.tc);
  out << buf;
  return out.str();
}

}  // namespace vseg::eval
