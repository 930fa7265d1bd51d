// vseg: one entry point for the whole lab — dataset generation, teacher
// training, pseudo-labeling, student distillation, evaluation and the
// ablation sweep. Every command validates its inputs, writes its artifacts
// first and finishes with a manifest, so reruns with identical inputs are
// byte-identical except for the manifest timestamp.
//
// Exit codes: 0 ok, 2 config parse error, 3 missing file, 4 dataset hash
// mismatch, 5 invalid inputs or corrupt artifacts.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "chart.hpp"
#include "json.hpp"
#include "vseg/eval.hpp"
#include "vseg/nets.hpp"
#include "vseg/pipeline.hpp"
#include "vseg/synthworld.hpp"
#include "vseg/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vseg;

namespace {

struct HashMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kConfigExit = 2, kMissingExit = 3, kHashExit = 4,
              kInvalidExit = 5;

std::uint64_t mix_seed(std::uint64_t s, int role) {
  return s ^ (0x9e3779b97f4a7c15ULL * (std::uint64_t)(role + 1));
}

// ---- experiment config ------------------------------------------------

struct ExperimentConfig {
  nets::SegNetConfig teacher, student;
  nets::EmbedHeadConfig head;
  pipeline::TrainConfig teacher_train, student_train;
  pipeline::TtaSpec tta;
  std::string scheme = "l";
  std::string schemes = "abcdefjkl";
  std::string train_data, eval_data, teacher_ckpt, eval_ids;
};

void parse_segnet(const json& j, nets::SegNetConfig& c) {
  c.in_channels = j.value("in_channels", c.in_channels);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.seed = j.value("seed", c.seed);
}

void parse_head(const json& j, nets::EmbedHeadConfig& c) {
  c.pool_size = j.value("pool_size", c.pool_size);
  c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.seed = j.value("seed", c.seed);
}

void parse_train(const json& j, pipeline::TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.poly_power = j.value("poly_power", c.poly_power);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.teacher_tl_weight = j.value("teacher_tl_weight", c.teacher_tl_weight);
  c.frame_gap = j.value("frame_gap", c.frame_gap);
  c.window = j.value("window", c.window);
  c.rho = j.value("rho", c.rho);
  c.pseudo_only = j.value("pseudo_only", c.pseudo_only);
  c.pseudo_threshold = j.value("pseudo_threshold", c.pseudo_threshold);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.seed = j.value("seed", c.seed);
}

void parse_tta(const json& j, pipeline::TtaSpec& t) {
  t.flips = j.value("flips", t.flips);
  if (j.contains("scales")) t.scales = j["scales"].get<std::vector<double>>();
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  ExperimentConfig c;
  // reference benchmark shapes unless the file says otherwise
  c.teacher.width = 16;
  c.teacher.depth = 3;
  c.teacher.num_classes = 4;
  c.student.width = 8;
  c.student.depth = 3;
  c.student.num_classes = 4;
  c.student.seed = 1;
  c.head.seed = 2;
  c.teacher_train.seed = 3;
  c.student_train.seed = 4;
  try {
    if (j.contains("teacher")) parse_segnet(j["teacher"], c.teacher);
    if (j.contains("student")) parse_segnet(j["student"], c.student);
    if (j.contains("head")) parse_head(j["head"], c.head);
    if (j.contains("teacher_train")) parse_train(j["teacher_train"], c.teacher_train);
    if (j.contains("student_train")) parse_train(j["student_train"], c.student_train);
    if (j.contains("tta")) parse_tta(j["tta"], c.tta);
    c.scheme = j.value("scheme", c.scheme);
    c.schemes = j.value("schemes", c.schemes);
    c.train_data = j.value("train_data", c.train_data);
    c.eval_data = j.value("eval_data", c.eval_data);
    c.teacher_ckpt = j.value("teacher_ckpt", c.teacher_ckpt);
    c.eval_ids = j.value("eval_ids", c.eval_ids);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    c.teacher.validate();
    c.student.validate();
    c.head.validate();
    c.teacher_train.validate();
    c.student_train.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

void apply_seed(ExperimentConfig& c, std::uint64_t s) {
  c.teacher.seed = mix_seed(s, 0);
  c.student.seed = mix_seed(s, 1);
  c.head.seed = mix_seed(s, 2);
  c.teacher_train.seed = mix_seed(s, 3);
  c.student_train.seed = mix_seed(s, 4);
}

json dump_segnet(const nets::SegNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"width", c.width},
          {"depth", c.depth},
          {"num_classes", c.num_classes},
          {"seed", c.seed}};
}

json dump_head(const nets::EmbedHeadConfig& c) {
  return {{"pool_size", c.pool_size},
          {"hidden_channels", c.hidden_channels},
          {"embed_dim", c.embed_dim},
          {"seed", c.seed}};
}

json dump_train(const pipeline::TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"steps_per_epoch", c.steps_per_epoch},
          {"base_lr", c.base_lr},
          {"momentum", c.momentum},
          {"poly_power", c.poly_power},
          {"lambda_reg", c.lambda_reg},
          {"teacher_tl_weight", c.teacher_tl_weight},
          {"frame_gap", c.frame_gap},
          {"window", c.window},
          {"rho", c.rho},
          {"pseudo_only", c.pseudo_only},
          {"pseudo_threshold", c.pseudo_threshold},
          {"pool_size", c.pool_size},
          {"seed", c.seed}};
}

json dump_config(const ExperimentConfig& c) {
  return {{"teacher", dump_segnet(c.teacher)},
          {"student", dump_segnet(c.student)},
          {"head", dump_head(c.head)},
          {"teacher_train", dump_train(c.teacher_train)},
          {"student_train", dump_train(c.student_train)},
          {"tta", {{"flips", c.tta.flips}, {"scales", c.tta.scales}}},
          {"scheme", c.scheme},
          {"schemes", c.schemes}};
}

// ---- manifests --------------------------------------------------------

std::string fnv16(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

std::string utc_now() {
  char buf[32];
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, const std::string& data_dir,
                    const std::string& data_hash, const json& seeds,
                    const std::vector<std::string>& checkpoints,
                    const std::vector<std::string>& reports) {
  for (const auto& group : {checkpoints, reports})
    for (const std::string& a : group) {
      const fs::path p = fs::path(a).is_absolute() ? fs::path(a) : out_dir / a;
      if (!fs::exists(p))
        throw ValidationError("manifest references missing artifact " +
                              p.string());
    }
  json m;
  m["type"] = "vseg-manifest";
  m["version"] = 1;
  m["command"] = command;
  m["experiment_id"] =
      command + "-" + fnv16(config.dump()).substr(0, 8) + "-" +
      (data_hash.empty() ? "nodata" : data_hash.substr(0, 8));
  m["config"] = config;
  m["data"] = data_dir;
  m["dataset_hash"] = data_hash;
  m["seeds"] = seeds;
  m["checkpoints"] = checkpoints;
  m["reports"] = reports;
  m["created"] = utc_now();
  const fs::path tmp = out_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw MissingFileError("cannot write " + tmp.string());
    out << m.dump(2) << "\n";
  }
  fs::rename(tmp, out_dir / "manifest.json");
}

void verify_against_manifest(const std::string& data_dir,
                             const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw MissingFileError("cannot open manifest " + manifest.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ManifestError(manifest.string() + ": " + e.what());
  }
  const std::string want = m.value("dataset_hash", "");
  if (want.empty()) return;
  const std::string got = pipeline::dataset_hash(data_dir);
  if (got != want)
    throw HashMismatch("dataset " + data_dir + " hashes to " + got +
                       " but the manifest " + manifest.string() +
                       " expects " + want);
}

void maybe_verify_sibling(const std::string& data_dir, const fs::path& ckpt,
                          bool no_verify) {
  const fs::path sib = ckpt.parent_path() / "manifest.json";
  if (!no_verify && fs::exists(sib)) verify_against_manifest(data_dir, sib);
}

// ---- checkpoint loading ----------------------------------------------

struct LoadedModel {
  nets::SegNet net;
  std::optional<nets::EmbedHead> head;
};

LoadedModel load_any_model(const fs::path& ckpt) {
  std::string cfg_json;
  std::map<std::string, Eigen::MatrixXd> tensors;
  nets::load_checkpoint(ckpt, cfg_json, tensors);
  json j;
  try {
    j = json::parse(cfg_json);
  } catch (const json::exception& e) {
    throw FormatError(ckpt.string() + ": bad config block: " + e.what());
  }
  nets::SegNetConfig arch;
  nets::EmbedHeadConfig head_cfg;
  bool has_head = false;
  try {
    parse_segnet(j.at("segnet"), arch);
    if (j.contains("mfhead")) {
      has_head = true;
      parse_head(j["mfhead"], head_cfg);
    }
  } catch (const json::exception& e) {
    throw FormatError(ckpt.string() + ": bad config block: " + e.what());
  }
  LoadedModel m{nets::SegNet(arch), std::nullopt};
  if (has_head) m.head.emplace(head_cfg);
  nets::load_model(ckpt, m.net, has_head ? &*m.head : nullptr);
  return m;
}

std::vector<int> all_ids(size_t n) {
  std::vector<int> ids(n);
  for (size_t i = 0; i < n; ++i) ids[i] = (int)i;
  return ids;
}

std::string resolve_out(const std::string& out) {
  const char* root = std::getenv("VSEG_OUT_ROOT");
  if (root && *root && !fs::path(out).is_absolute())
    return (fs::path(root) / out).string();
  return out;
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  if (!out) throw MissingFileError("cannot write " + p.string());
  out << body;
}

// ---- commands ---------------------------------------------------------

int cmd_gen_data(const std::string& config, const std::string& out_arg) {
  const std::string out = resolve_out(out_arg);
  const pipeline::DatasetSpec spec = pipeline::load_dataset_spec(config);
  const auto scenes = pipeline::make_scene_specs(spec);
  pipeline::save_dataset(out, scenes);
  const std::string hash = pipeline::dataset_hash(out);
  json snapshot = {{"count", spec.count},
                   {"height", spec.height},
                   {"width", spec.width},
                   {"num_classes", spec.num_classes},
                   {"num_frames", spec.num_frames},
                   {"labeled_stride", spec.labeled_stride},
                   {"jitter", spec.jitter},
                   {"min_shapes", spec.min_shapes},
                   {"max_shapes", spec.max_shapes},
                   {"min_size", spec.min_size},
                   {"max_size", spec.max_size},
                   {"max_speed", spec.max_speed},
                   {"max_pan", spec.max_pan},
                   {"flow_noise_sigma", spec.flow_noise_sigma},
                   {"seed", spec.seed}};
  write_manifest(out, "gen-data", snapshot, out, hash,
                 {{"dataset", spec.seed}}, {}, {"dataset.json"});
  std::cout << "wrote " << scenes.size() << " sequences to " << out
            << " (hash " << hash << ")\n";
  return 0;
}

int cmd_train_teacher(const ExperimentConfig& cfg, const json& seeds,
                      const std::string& data, const std::string& out_arg) {
  const std::string out = resolve_out(out_arg);
  const auto seqs = pipeline::load_dataset(data);
  fs::create_directories(out);
  std::vector<pipeline::LogRow> log;
  nets::SegNet net =
      pipeline::train_teacher(seqs, cfg.teacher, cfg.teacher_train, &log);
  nets::save_model(fs::path(out) / "teacher.ckpt", net, nullptr);
  fs::remove(fs::path(out) / "train_teacher.csv");
  pipeline::append_log_csv((fs::path(out) / "train_teacher.csv").string(), log);
  write_manifest(out, "train-teacher", dump_config(cfg), data,
                 pipeline::dataset_hash(data), seeds, {"teacher.ckpt"},
                 {"train_teacher.csv"});
  std::cout << "teacher checkpoint: " << (fs::path(out) / "teacher.ckpt").string()
            << " (" << log.size() << " steps, final total "
            << (log.empty() ? 0.0 : log.back().total) << ")\n";
  return 0;
}

int cmd_pseudo_label(const ExperimentConfig& cfg, const json& seeds,
                     const std::string& ckpt, const std::string& data,
                     const std::string& out_arg, bool no_verify) {
  const std::string out = resolve_out(out_arg);
  maybe_verify_sibling(data, ckpt, no_verify);
  LoadedModel teacher = load_any_model(ckpt);
  const auto seqs = pipeline::load_dataset(data);
  const auto ps = pipeline::generate_pseudo_labels(
      teacher.net, seqs, cfg.tta, cfg.student_train.pseudo_threshold);
  pipeline::save_pseudo_labels(data, ps);
  fs::create_directories(out);
  int made = 0;
  for (const auto& row : ps.labels)
    for (const auto& l : row)
      if (l) ++made;
  json snapshot = dump_config(cfg);
  snapshot["teacher_ckpt"] = ckpt;
  write_manifest(out, "pseudo-label", snapshot, data,
                 pipeline::dataset_hash(data), seeds,
                 {(fs::absolute(data) / "pseudo.json").string()}, {});
  std::cout << "pseudo-labeled " << made << " frames in " << data << "\n";
  return 0;
}

pipeline::SchemeSwitches switches_from_args(
    const ExperimentConfig& cfg, const std::string& scheme_flag,
    const std::vector<std::string>& switch_args, char* scheme_out) {
  std::string scheme = scheme_flag.empty() ? cfg.scheme : scheme_flag;
  if (scheme.size() != 1)
    throw ConfigError("scheme must be a single letter, got '" + scheme + "'");
  pipeline::SchemeSwitches sw = pipeline::scheme_switches(scheme[0]);
  for (const std::string& s : switch_args) {
    const auto eq = s.find('=');
    const std::string key = s.substr(0, eq == std::string::npos ? s.size() : eq);
    const std::string val = eq == std::string::npos ? "on" : s.substr(eq + 1);
    bool on;
    if (val == "on" || val == "true" || val == "1")
      on = true;
    else if (val == "off" || val == "false" || val == "0")
      on = false;
    else
      throw ConfigError("bad --switch value '" + s + "'");
    if (key == "tl")
      sw.tl = on;
    else if (key == "pf")
      sw.pf = on;
    else if (key == "mf")
      sw.mf = on;
    else if (key == "pl")
      sw.pl = on;
    else
      throw ConfigError("unknown --switch key '" + key + "'");
  }
  *scheme_out = scheme[0];
  return sw;
}

int cmd_train_student(const ExperimentConfig& cfg, const json& seeds,
                      const std::string& data, const std::string& teacher_ckpt,
                      const std::string& out_arg, const std::string& scheme_flag,
                      const std::vector<std::string>& switch_args,
                      bool no_verify) {
  const std::string out = resolve_out(out_arg);
  char scheme = 0;
  const pipeline::SchemeSwitches sw =
      switches_from_args(cfg, scheme_flag, switch_args, &scheme);
  maybe_verify_sibling(data, teacher_ckpt, no_verify);
  LoadedModel teacher = load_any_model(teacher_ckpt);
  const auto seqs = pipeline::load_dataset(data);
  std::optional<pipeline::PseudoLabelSet> ps;
  if (sw.pl) ps = pipeline::load_pseudo_labels(data, seqs);
  const pipeline::MixedDataset mixed = pipeline::combine_datasets(
      seqs, ps ? &*ps : nullptr, cfg.student_train.rho,
      cfg.student_train.pseudo_only);

  fs::create_directories(out);
  std::vector<pipeline::LogRow> log;
  nets::EmbedHead head(cfg.head);
  nets::SegNet student = pipeline::train_student(
      mixed, teacher.net, cfg.student, sw.mf ? &cfg.head : nullptr,
      cfg.student_train, sw, &log, sw.mf ? &head : nullptr);
  nets::save_model(fs::path(out) / "student.ckpt", student,
                   sw.mf ? &head : nullptr);
  fs::remove(fs::path(out) / "train_student.csv");
  pipeline::append_log_csv((fs::path(out) / "train_student.csv").string(), log);
  json snapshot = dump_config(cfg);
  snapshot["scheme"] = std::string(1, scheme);
  snapshot["switches"] = {{"tl", sw.tl}, {"pf", sw.pf}, {"mf", sw.mf}, {"pl", sw.pl}};
  snapshot["teacher_ckpt"] = teacher_ckpt;
  write_manifest(out, "train-student", snapshot, data,
                 pipeline::dataset_hash(data), seeds, {"student.ckpt"},
                 {"train_student.csv"});
  std::cout << "student checkpoint: " << (fs::path(out) / "student.ckpt").string()
            << " (scheme " << scheme << ", " << log.size() << " steps)\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data,
                 const std::string& out_arg, const std::string& ids_path,
                 const std::string& manifest_path) {
  const std::string out = resolve_out(out_arg);
  if (!manifest_path.empty()) verify_against_manifest(data, manifest_path);
  LoadedModel m = load_any_model(ckpt);
  const auto seqs = pipeline::load_dataset(data);
  const std::vector<int> ids =
      ids_path.empty() ? all_ids(seqs.size()) : eval::load_id_list(ids_path);
  const eval::MetricReport report = eval::evaluate_model(m.net, seqs, ids);
  fs::create_directories(out);
  eval::write_report_csv((fs::path(out) / "report.csv").string(), report);
  write_text(fs::path(out) / "report.txt", eval::render_report(report));
  chart::tc_curve(fs::path(out) / "tc_curve.ppm", report.per_pair_tc,
                  report.tc);
  json snapshot = {{"ckpt", ckpt}, {"ids", ids}};
  write_manifest(out, "evaluate", snapshot, data,
                 pipeline::dataset_hash(data), json::object(), {},
                 {"report.csv", "report.txt", "tc_curve.ppm"});
  std::cout << eval::render_report(report);
  return 0;
}

int cmd_ablation(const ExperimentConfig& cfg, const json& seeds,
                 const std::string& out_arg) {
  const std::string out = resolve_out(out_arg);
  if (cfg.train_data.empty() || cfg.eval_data.empty())
    throw ConfigError("ablation config needs train_data and eval_data paths");
  const auto train_seqs = pipeline::load_dataset(cfg.train_data);
  const auto eval_seqs = pipeline::load_dataset(cfg.eval_data);
  const std::vector<int> ids = cfg.eval_ids.empty()
                                   ? all_ids(eval_seqs.size())
                                   : eval::load_id_list(cfg.eval_ids);
  fs::create_directories(out);

  nets::SegNet teacher = [&] {
    if (!cfg.teacher_ckpt.empty()) return load_any_model(cfg.teacher_ckpt).net;
    std::vector<pipeline::LogRow> tlog;
    nets::SegNet t =
        pipeline::train_teacher(train_seqs, cfg.teacher, cfg.teacher_train, &tlog);
    nets::save_model(fs::path(out) / "teacher.ckpt", t, nullptr);
    return t;
  }();

  bool any_pl = false;
  for (char s : cfg.schemes) any_pl |= pipeline::scheme_switches(s).pl;
  std::optional<pipeline::PseudoLabelSet> ps;
  if (any_pl)
    ps = pipeline::generate_pseudo_labels(teacher, train_seqs, cfg.tta,
                                          cfg.student_train.pseudo_threshold);

  std::vector<chart::BarRow> bars;
  std::ostringstream csv, tab;
  csv << "scheme,tl,pf,mf,pl,miou,pixel_accuracy,tc\n";
  tab << "scheme  tl  pf  mf  pl    miou  pixacc      tc\n";
  for (char s : cfg.schemes) {
    const pipeline::SchemeSwitches sw = pipeline::scheme_switches(s);
    const pipeline::MixedDataset mixed = pipeline::combine_datasets(
        train_seqs, sw.pl ? &*ps : nullptr, cfg.student_train.rho,
        cfg.student_train.pseudo_only);
    nets::EmbedHead head(cfg.head);
    nets::SegNet student = pipeline::train_student(
        mixed, teacher, cfg.student, sw.mf ? &cfg.head : nullptr,
        cfg.student_train, sw, nullptr, sw.mf ? &head : nullptr);
    nets::save_model(fs::path(out) / ("student_" + std::string(1, s) + ".ckpt"),
                     student, sw.mf ? &head : nullptr);
    const eval::MetricReport r = eval::evaluate_model(student, eval_seqs, ids);
    char line[160];
    std::snprintf(line, sizeof line, "%c,%d,%d,%d,%d,%.10g,%.10g,%.10g\n", s,
                  (int)sw.tl, (int)sw.pf, (int)sw.mf, (int)sw.pl, r.miou,
                  r.pixel_accuracy, r.tc);
    csv << line;
    const auto mark = [](bool b) { return b ? 'x' : '-'; };
    std::snprintf(line, sizeof line, "     %c   %c   %c   %c   %c  %6.4f  %6.4f  %6.4f\n",
                  s, mark(sw.tl), mark(sw.pf), mark(sw.mf), mark(sw.pl),
                  r.miou, r.pixel_accuracy, r.tc);
    tab << line;
    bars.push_back({std::string(1, s), r.miou, r.tc});
    std::cout << "scheme " << s << ": miou " << r.miou << "  tc " << r.tc
              << "\n";
  }
  write_text(fs::path(out) / "ablation.csv", csv.str());
  write_text(fs::path(out) / "ablation.txt", tab.str());
  chart::ablation_bars(fs::path(out) / "ablation_bars.ppm", bars);
  std::vector<std::string> ckpts;
  if (cfg.teacher_ckpt.empty()) ckpts.push_back("teacher.ckpt");
  for (char s : cfg.schemes)
    ckpts.push_back("student_" + std::string(1, s) + ".ckpt");
  write_manifest(out, "ablation", dump_config(cfg), cfg.train_data,
                 pipeline::dataset_hash(cfg.train_data), seeds, ckpts,
                 {"ablation.csv", "ablation.txt", "ablation_bars.ppm"});
  std::cout << tab.str();
  return 0;
}

json seeds_of(const ExperimentConfig& c, const std::optional<std::uint64_t>& s) {
  json j = {{"teacher", c.teacher.seed},
            {"student", c.student.seed},
            {"head", c.head.seed},
            {"teacher_train", c.teacher_train.seed},
            {"student_train", c.student_train.seed}};
  if (s) j["master"] = *s;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporally consistent per-frame segmentation lab"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, ids, manifest, scheme;
  std::vector<std::string> switch_args;
  std::uint64_t seed = 0;
  bool no_verify = false;

  auto* gen = app.add_subcommand("gen-data", "render a dataset from a spec");
  gen->add_option("--config", config, "dataset spec json")->required();
  gen->add_option("--out", out, "dataset directory")->required();

  auto* tt = app.add_subcommand("train-teacher", "train the teacher net");
  tt->add_option("--config", config, "experiment config json")->required();
  tt->add_option("--data", data, "dataset directory")->required();
  tt->add_option("--out", out, "experiment directory")->required();
  auto* tt_seed = tt->add_option("--seed", seed, "master seed override");

  auto* pl = app.add_subcommand("pseudo-label",
                                "teacher pseudo-labels for unlabeled frames");
  pl->add_option("--config", config, "experiment config json")->required();
  pl->add_option("--ckpt", ckpt, "teacher checkpoint")->required();
  pl->add_option("--data", data, "dataset directory")->required();
  pl->add_option("--out", out, "experiment directory")->required();
  pl->add_flag("--no-verify", no_verify, "skip manifest hash verification");

  auto* ts = app.add_subcommand("train-student", "distill the student net");
  ts->add_option("--config", config, "experiment config json")->required();
  ts->add_option("--data", data, "dataset directory")->required();
  ts->add_option("--teacher", ckpt, "teacher checkpoint")->required();
  ts->add_option("--out", out, "experiment directory")->required();
  ts->add_option("--scheme", scheme, "ablation scheme letter");
  ts->add_option("--switch", switch_args, "override: tl|pf|mf|pl=on/off");
  auto* ts_seed = ts->add_option("--seed", seed, "master seed override");
  ts->add_flag("--no-verify", no_verify, "skip manifest hash verification");

  auto* ev = app.add_subcommand("evaluate", "metric report for a checkpoint");
  ev->add_option("--ckpt", ckpt, "model checkpoint")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--out", out, "report directory")->required();
  ev->add_option("--ids", ids, "evaluation-subset id list file");
  ev->add_option("--manifest", manifest, "verify data against this manifest");

  auto* ab = app.add_subcommand("ablation", "scheme sweep with a summary table");
  ab->add_option("--config", config, "experiment config json")->required();
  ab->add_option("--out", out, "sweep directory")->required();
  auto* ab_seed = ab->add_option("--seed", seed, "master seed override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config, out);
    ExperimentConfig cfg;
    std::optional<std::uint64_t> master;
    if (!ev->parsed()) {
      cfg = load_config(config);
      const auto* seed_opt = tt->parsed()   ? tt_seed
                             : ts->parsed() ? ts_seed
                             : ab->parsed() ? ab_seed
                                            : nullptr;
      if (seed_opt && seed_opt->count() > 0) {
        master = seed;
        apply_seed(cfg, seed);
      }
    }
    if (tt->parsed())
      return cmd_train_teacher(cfg, seeds_of(cfg, master), data, out);
    if (pl->parsed())
      return cmd_pseudo_label(cfg, seeds_of(cfg, master), ckpt, data, out,
                              no_verify);
    if (ts->parsed())
      return cmd_train_student(cfg, seeds_of(cfg, master), data, ckpt, out,
                               scheme, switch_args, no_verify);
    if (ev->parsed()) return cmd_evaluate(ckpt, data, out, ids, manifest);
    if (ab->parsed()) return cmd_ablation(cfg, seeds_of(cfg, master), out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingExit;
  } catch (const HashMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kHashExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidExit;
  }
  return 0;
}
