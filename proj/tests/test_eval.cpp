#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "vseg/eval.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace vseg;
using namespace vseg::eval;

namespace {

LabelMap constant_map(int H, int W, std::uint8_t v) {
  LabelMap m(H, W);
  m.setConstant(v);
  return m;
}

LabelMap random_labels(int H, int W, int K, unsigned seed) {
  std::mt19937 eng(seed);
  std::uniform_int_distribution<int> d(0, K - 1);
  LabelMap m(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) m(y, x) = (std::uint8_t)d(eng);
  return m;
}

synth::VideoSequence make_eval_sequence(unsigned seed, int frames = 4) {
  synth::SceneSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.num_classes = 3;
  spec.num_frames = frames;
  spec.labeled_stride = 1;
  spec.seed = seed;
  synth::ShapeSpec s1;
  s1.kind = synth::ShapeKind::Rectangle;
  s1.class_id = 1;
  s1.size = 6;
  s1.start_x = 5;
  s1.start_y = 5;
  s1.vel_x = 1;
  s1.vel_y = 0;
  synth::ShapeSpec s2;
  s2.kind = synth::ShapeKind::Disc;
  s2.class_id = 2;
  s2.size = 5;
  s2.start_x = 10;
  s2.start_y = 9;
  s2.vel_x = 0;
  s2.vel_y = 1;
  s2.depth = 2;
  spec.shapes = {s1, s2};
  return synth::render_sequence(spec);
}

std::vector<LabelMap> gt_predictions(const synth::VideoSequence& seq) {
  std::vector<LabelMap> p;
  for (const auto& lab : seq.labels) p.push_back(*lab);
  return p;
}

}  // namespace

TEST_CASE("miou: hand confusion matrix, perfect case, errors") {
  LabelMap pred(2, 2), gt(2, 2);
  pred << 1, 1, 0, 0;
  gt << 1, 0, 0, 0;
  MiouResult r = miou({pred}, {gt}, 2);
  CHECK(r.per_class[0].iou == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.per_class[1].iou == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  CHECK(r.pixel_accuracy == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.per_class[0].iou_valid);
  CHECK(r.per_class[1].iou_valid);

  MiouResult perfect = miou({gt}, {gt}, 2);
  CHECK(perfect.miou == 1.0);
  CHECK(perfect.pixel_accuracy == 1.0);

  LabelMap all_ign = constant_map(2, 2, kIgnoreIndex);
  CHECK_THROWS_AS(miou({pred}, {all_ign}, 2), ValidationError);
  CHECK_THROWS_AS(miou({pred}, {constant_map(3, 2, 0)}, 2), DimensionError);
  CHECK_THROWS_AS(miou({pred}, {gt}, 1), ValidationError);  // label 1 oor
}

TEST_CASE("miou: ignore pixels excluded, absent classes skipped, order free") {
  LabelMap pred(2, 2), gt(2, 2);
  pred << 1, 1, 0, 0;
  gt << 1, kIgnoreIndex, 0, 0;
  MiouResult r = miou({pred}, {gt}, 4);
  // the ignored pixel drops the lone false positive for class 1
  CHECK(r.per_class[1].iou == 1.0);
  CHECK(r.per_class[0].iou == 1.0);
  CHECK_FALSE(r.per_class[2].iou_valid);  // classes 2,3 appear nowhere
  CHECK_FALSE(r.per_class[3].iou_valid);
  CHECK(r.miou == 1.0);
  CHECK(r.pixel_accuracy == 1.0);

  // global accumulation is frame-order independent
  LabelMap p2 = random_labels(6, 6, 3, 1), g2 = random_labels(6, 6, 3, 2);
  LabelMap p3 = random_labels(6, 6, 3, 3), g3 = random_labels(6, 6, 3, 4);
  MiouResult ab = miou({p2, p3}, {g2, g3}, 3);
  MiouResult ba = miou({p3, p2}, {g3, g2}, 3);
  CHECK(ab.miou == ba.miou);
  CHECK(ab.pixel_accuracy == ba.pixel_accuracy);
}

TEST_CASE("tc_pair: static, disjoint, integer-shift oracle") {
  FlowField zero(8, 8);
  LabelMap a = random_labels(8, 8, 3, 7);
  CHECK(tc_pair(a, a, zero) == 1.0);

  CHECK(tc_pair(constant_map(8, 8, 0), constant_map(8, 8, 1), zero) == 0.0);

  // rectangle moving by (dx=2, dy=1) with exact flow: perfect on the
  // valid region
  LabelMap prev = constant_map(10, 10, 0), cur = constant_map(10, 10, 0);
  for (int y = 2; y <= 4; ++y)
    for (int x = 3; x <= 5; ++x) prev(y, x) = 1;
  for (int y = 3; y <= 5; ++y)
    for (int x = 5; x <= 7; ++x) cur(y, x) = 1;
  FlowField back(10, 10);
  back.u.setConstant(-2.0);
  back.v.setConstant(-1.0);
  CHECK(tc_pair(cur, prev, back) == 1.0);

  CHECK_THROWS_AS(tc_pair(a, constant_map(4, 4, 0), zero), DimensionError);
  CHECK_THROWS_AS(tc_pair(a, a, FlowField(4, 4)), DimensionError);
}

TEST_CASE("tc_pair: relabeling symmetry and visibility exclusion") {
  FlowField zero(8, 8);
  LabelMap a = random_labels(8, 8, 3, 11);
  LabelMap b = random_labels(8, 8, 3, 12);
  const double base = tc_pair(a, b, zero);
  CHECK(base > 0.0);
  CHECK(base < 1.0);
  auto permute = [](const LabelMap& m) {
    LabelMap out = m;
    for (int y = 0; y < m.rows(); ++y)
      for (int x = 0; x < m.cols(); ++x) out(y, x) = (m(y, x) + 1) % 3;
    return out;
  };
  // relabeling permutes the class-sum order, so compare to fp roundoff
  CHECK(tc_pair(permute(a), permute(b), zero) ==
        doctest::Approx(base).epsilon(1e-12));

  // one disagreeing pixel, masked out by the visibility mask
  LabelMap c = a;
  c(3, 3) = (a(3, 3) + 1) % 3;
  CHECK(tc_pair(a, c, zero) < 1.0);
  BinaryMap vis(8, 8);
  vis.setConstant(1);
  vis(3, 3) = 0;
  CHECK(tc_pair(a, c, zero, &vis) == 1.0);
  BinaryMap bad(4, 4);
  CHECK_THROWS_AS(tc_pair(a, c, zero, &bad), DimensionError);
}

TEST_CASE("tc_sequence: flat static curve, disjoint, recomposition") {
  LabelMap a = random_labels(8, 8, 3, 21);
  std::vector<FlowField> zeros(3, FlowField(8, 8));
  TcResult stat = tc_sequence({a, a, a, a}, zeros);
  CHECK(stat.tc == 1.0);
  REQUIRE(stat.per_pair.size() == 3);
  for (double v : stat.per_pair) CHECK(v == 1.0);

  LabelMap c0 = constant_map(8, 8, 0), c1 = constant_map(8, 8, 1);
  CHECK(tc_sequence({c0, c1, c0, c1}, zeros).tc == 0.0);

  std::vector<LabelMap> seq;
  for (int i = 0; i < 4; ++i) seq.push_back(random_labels(8, 8, 3, 30 + i));
  TcResult r = tc_sequence(seq, zeros);
  double mean = 0;
  for (int i = 0; i < 3; ++i) {
    const double pair = tc_pair(seq[i + 1], seq[i], zeros[i]);
    CHECK(pair == r.per_pair[i]);
    mean += pair;
  }
  CHECK(std::abs(r.tc - mean / 3.0) < 1e-12);

  CHECK_THROWS_AS(tc_sequence({a}, {}), ValidationError);
  CHECK_THROWS_AS(tc_sequence({a, a}, zeros), DimensionError);
}

TEST_CASE("evaluate: ground-truth predictions are perfect") {
  std::vector<synth::VideoSequence> seqs = {make_eval_sequence(5),
                                            make_eval_sequence(6)};
  std::vector<std::vector<LabelMap>> preds = {gt_predictions(seqs[0]),
                                              gt_predictions(seqs[1])};
  MetricReport rep = evaluate_predictions(seqs, preds, {0, 1});
  CHECK(rep.miou == 1.0);
  CHECK(rep.pixel_accuracy == 1.0);
  CHECK(rep.tc == 1.0);
  REQUIRE(rep.per_pair_tc.size() == 3);
  for (double v : rep.per_pair_tc) CHECK(v == 1.0);
  for (const auto& row : rep.per_class)
    if (row.tc_valid) CHECK(row.tc == 1.0);

  // per-class mean over evaluated classes reproduces miou
  double s = 0;
  int n = 0;
  for (const auto& row : rep.per_class)
    if (row.iou_valid) {
      s += row.iou;
      ++n;
    }
  CHECK(std::abs(s / n - rep.miou) < 1e-9);
}

TEST_CASE("evaluate: constant predictor has perfect tc but poor miou") {
  std::vector<synth::VideoSequence> seqs = {make_eval_sequence(7)};
  std::vector<LabelMap> flat(seqs[0].num_frames(), constant_map(16, 16, 0));
  MetricReport rep = evaluate_predictions(seqs, {flat}, {0});
  CHECK(rep.tc == 1.0);
  CHECK(rep.miou < 0.6);

  CHECK_THROWS_AS(evaluate_predictions(seqs, {flat}, {}), ValidationError);
  CHECK_THROWS_AS(evaluate_predictions(seqs, {flat}, {3}), ValidationError);
}

TEST_CASE("evaluate: subset selection controls the tc side only") {
  std::vector<synth::VideoSequence> seqs = {make_eval_sequence(8),
                                            make_eval_sequence(9)};
  std::vector<std::vector<LabelMap>> preds = {gt_predictions(seqs[0]),
                                              gt_predictions(seqs[1])};
  // wreck temporal consistency of sequence 1 without touching its labels'
  // accuracy story: alternate unrelated constant maps
  for (int t = 0; t < seqs[1].num_frames(); ++t)
    preds[1][t] = constant_map(16, 16, (std::uint8_t)(t % 2));
  MetricReport only0 = evaluate_predictions(seqs, preds, {0});
  CHECK(only0.tc == 1.0);
  MetricReport both = evaluate_predictions(seqs, preds, {0, 1});
  CHECK(both.tc < only0.tc);
}

TEST_CASE("evaluate_model is deterministic and in range") {
  std::vector<synth::VideoSequence> seqs = {make_eval_sequence(10, 3)};
  nets::SegNetConfig cfg;
  cfg.width = 4;
  cfg.depth = 2;
  cfg.num_classes = 3;
  cfg.seed = 31;
  nets::SegNet net(cfg);
  MetricReport a = evaluate_model(net, seqs, {0});
  MetricReport b = evaluate_model(net, seqs, {0});
  CHECK(a.miou == b.miou);
  CHECK(a.pixel_accuracy == b.pixel_accuracy);
  CHECK(a.tc == b.tc);
  REQUIRE(a.per_pair_tc.size() == b.per_pair_tc.size());
  for (size_t i = 0; i < a.per_pair_tc.size(); ++i)
    CHECK(a.per_pair_tc[i] == b.per_pair_tc[i]);
  CHECK(a.miou >= 0.0);
  CHECK(a.miou <= 1.0);
  CHECK(a.tc >= 0.0);
  CHECK(a.tc <= 1.0);
  CHECK(a.pixel_accuracy >= 0.0);
  CHECK(a.pixel_accuracy <= 1.0);
}

TEST_CASE("id list and report files round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "vseg_eval_test";
  fs::create_directories(dir);

  const std::vector<int> ids = {3, 0, 17};
  save_id_list((dir / "ids.txt").string(), ids);
  CHECK(load_id_list((dir / "ids.txt").string()) == ids);

  {
    std::ofstream out(dir / "ids_comment.txt");
    out << "# eval subset\n2\n\n5 # with comment\n";
  }
  CHECK(load_id_list((dir / "ids_comment.txt").string()) ==
        std::vector<int>{2, 5});
  {
    std::ofstream out(dir / "ids_bad.txt");
    out << "2\nnot-a-number\n";
  }
  CHECK_THROWS_AS(load_id_list((dir / "ids_bad.txt").string()), FormatError);
  CHECK_THROWS_AS(load_id_list((dir / "absent.txt").string()),
                  MissingFileError);

  MetricReport rep;
  rep.miou = 7.0 / 12.0;
  rep.pixel_accuracy = 0.75;
  rep.tc = 0.5;
  PerClassRow r0{0, 2.0 / 3.0, 1.0, true, true};
  PerClassRow r1{1, 0.5, 0.0, true, false};
  rep.per_class = {r0, r1};
  rep.per_pair_tc = {0.25, 0.75};
  write_report_csv((dir / "report.csv").string(), rep);
  std::ifstream in(dir / "report.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "key,index,value");
  int rows = 0;
  bool saw_pair = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("pair_tc,1,", 0) == 0) saw_pair = true;
  }
  CHECK(rows == 8);  // 3 scalars + 3 valid class cells + 2 pairs
  CHECK(saw_pair);

  const std::string table = render_report(rep);
  CHECK(table.find("miou 0.5833") != std::string::npos);
  CHECK(table.find("-") != std::string::npos);  // invalid tc cell
  fs::remove_all(dir);
}
