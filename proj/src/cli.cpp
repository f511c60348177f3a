#include "tsgan/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsgan/evaluator.hpp"
#include "tsgan/trainer.hpp"

namespace fs = std::filesystem;

namespace tsgan::cli {
namespace {

int exit_code(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::Usage: return 2;
    case ErrorCategory::Config: return 3;
    case ErrorCategory::Data: return 4;
    case ErrorCategory::Numeric: return 5;
    case ErrorCategory::Io: return 6;
  }
  return 1;
}

const char* category_name(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::Io: return "io";
  }
  return "error";
}

bool verbose() {
  const char* v = std::getenv("TSGAN_VERBOSE");
  return v && *v && std::string(v) != "0";
}

// Flags shared by every subcommand.
struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;  // < 0: keep the config file's seed
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "config file (defaults apply when omitted)");
  cmd->add_option("--out", a.out_dir, "output directory")->required();
  cmd->add_option("--seed", a.seed, "seed override");
}

ConfigFile load_config(const std::string& path) {
  return path.empty() ? ConfigFile::parse_string("") : ConfigFile::parse_file(path);
}

// Every run records what it actually ran with: the fully resolved config
// plus the tool version, inside the run's own output directory.
void write_run_stamp(const std::string& out_dir, const TrainConfig& tc, const SyntheticConfig& sc,
                     const EvalProtocol& ep) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "config_resolved.cfg").string();
  std::ofstream out(path, std::ios::trunc);
  TSGAN_CHECK(out.good(), Io, "cannot write " + path);
  out << "# tsgan " << kToolVersion << "\n" << resolved_config_text(tc, sc, ep);
  out.flush();
  TSGAN_CHECK(out.good(), Io, "write failed: " + path);
}

// Training data: a manifest when --data is given, the config's synthetic
// set otherwise.
Dataset train_data(const std::string& data_path, const SyntheticConfig& sc) {
  if (data_path.empty()) return generate_synthetic(sc);
  fs::path p(data_path);
  if (fs::is_directory(p)) p /= "manifest.tsv";
  return load_dataset(p.string(), Split::Train);
}

// Evaluation data: a manifest, or held-out synthetic images of the same
// identities (the per-image streams continue past the training block).
Dataset eval_data(const std::string& data_path, const SyntheticConfig& sc) {
  if (!data_path.empty()) {
    fs::path p(data_path);
    if (fs::is_directory(p)) p /= "manifest.tsv";
    return load_dataset(p.string(), Split::Query);
  }
  return generate_synthetic(sc, /*first_image_index=*/sc.images_per_identity_per_modality,
                            /*images_override=*/8);
}

std::pair<SearchMode, ShotMode> parse_protocol(const std::string& s) {
  auto comma = s.find(',');
  TSGAN_CHECK(comma != std::string::npos, Usage,
              "--protocol expects <mode>,<shot> (e.g. all-search,single)");
  return {search_mode_from(s.substr(0, comma)), shot_mode_from(s.substr(comma + 1))};
}

PersonImage image_from(const Array& flat, Eigen::Index index, int channels, int h, int w,
                       int identity, Modality modality) {
  PersonImage img;
  const Eigen::Index plane = static_cast<Eigen::Index>(channels) * h * w;
  img.pixels = flat.segment(index * plane, plane);
  img.channels = channels;
  img.height = h;
  img.width = w;
  img.identity = identity;
  img.camera = kSyntheticCamera;
  img.modality = modality;
  return img;
}

// Builds a Trainer shaped like the archived one and loads it.
Trainer trainer_from_checkpoint(const std::string& path, const TrainConfig& tc) {
  TSGAN_CHECK(!path.empty(), Config, "missing --checkpoint (path to a training checkpoint)");
  Trainer tr(tc, checkpoint_classes(path));
  tr.load_checkpoint(path);
  return tr;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
  ConfigFile cf = load_config(args.config_path);
  TrainConfig tc = cf.train_config();
  SyntheticConfig sc = cf.synthetic_config();
  if (args.seed >= 0) sc.seed = static_cast<std::uint64_t>(args.seed);
  write_run_stamp(args.out_dir, tc, sc, cf.eval_protocol());

  Dataset ds = generate_synthetic(sc);
  export_dataset(ds, args.out_dir);
  std::cout << "wrote " << ds.items.size() << " images (" << ds.n_identities()
            << " identities, " << ds.height << "x" << ds.width << ") to " << args.out_dir
            << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& data_path) {
  ConfigFile cf = load_config(args.config_path);
  TrainConfig tc = cf.train_config();
  SyntheticConfig sc = cf.synthetic_config();
  if (args.seed >= 0) tc.seed = static_cast<std::uint64_t>(args.seed);
  write_run_stamp(args.out_dir, tc, sc, cf.eval_protocol());

  Dataset ir = modality_subset(train_data(data_path, sc), Modality::IR);
  PretrainResult res = pretrain_teacher(ir, tc);

  const std::string log_path = (fs::path(args.out_dir) / "pretrain_log.txt").string();
  std::ofstream log(log_path, std::ios::trunc);
  TSGAN_CHECK(log.good(), Io, "cannot write " + log_path);
  for (const auto& line : res.log) {
    log << line << "\n";
    if (verbose()) std::cerr << line << "\n";
  }

  const std::string teacher_path = (fs::path(args.out_dir) / "teacher.tsgn").string();
  save_teacher(teacher_path, res.teacher, tc);
  std::cout << "holdout R1 " << res.r1 << "  mAP " << res.map << "\n"
            << "teacher checkpoint: " << teacher_path << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& teacher_path, const std::string& resume_path,
              const std::string& eval_data_path, int eval_every) {
  ConfigFile cf = load_config(args.config_path);
  TrainConfig tc = cf.train_config();
  SyntheticConfig sc = cf.synthetic_config();
  EvalProtocol ep = cf.eval_protocol();
  if (args.seed >= 0) tc.seed = static_cast<std::uint64_t>(args.seed);
  TSGAN_CHECK(tc.ts_mode == TsMode::None || !teacher_path.empty(), Config,
              "train requires --teacher (path to a pretrained teacher checkpoint); "
              "pretrain-teacher produces one");
  write_run_stamp(args.out_dir, tc, sc, ep);

  Dataset ds = train_data(data_path, sc);
  Trainer tr(tc, ds.n_identities());
  if (!teacher_path.empty()) tr.teacher() = load_teacher(teacher_path, tc);
  if (!resume_path.empty()) tr.load_checkpoint(resume_path);

  Dataset holdout;
  const Dataset* eval_ds = nullptr;
  if (eval_every > 0) {
    // in-training snapshots need held-out images; synthetic runs derive them
    TSGAN_CHECK(data_path.empty() || !eval_data_path.empty(), Config,
                "--eval-every with --data needs --eval-data (held-out manifest)");
    holdout = eval_data(eval_data_path, sc);
    eval_ds = &holdout;
  }

  FitResult res = tr.fit(ds, args.out_dir, eval_ds, eval_every, ep);
  if (verbose())
    for (const auto& r : res.reports) std::cerr << r.line() << "\n";
  std::cout << "trained " << res.reports.size() << " steps ("
            << tr.next_epoch() << " epochs); log: " << res.log_path << "\n"
            << "checkpoint: " << res.checkpoints.back() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& data_path,
             const std::string& checkpoint_path, const std::string& protocol_str, bool rerank_on,
             int trials) {
  ConfigFile cf = load_config(args.config_path);
  TrainConfig tc = cf.train_config();
  SyntheticConfig sc = cf.synthetic_config();
  EvalProtocol ep = cf.eval_protocol();
  if (args.seed >= 0) tc.seed = static_cast<std::uint64_t>(args.seed);
  if (rerank_on) ep.rerank = true;
  if (trials > 0) ep.trials = trials;
  write_run_stamp(args.out_dir, tc, sc, ep);

  Trainer tr = trainer_from_checkpoint(checkpoint_path, tc);
  Dataset ds = eval_data(data_path, sc);

  std::vector<std::pair<SearchMode, ShotMode>> cells =
      protocol_str.empty() ? standard_cells()
                           : std::vector<std::pair<SearchMode, ShotMode>>{
                                 parse_protocol(protocol_str)};
  MetricsTable table = evaluate(tr.student(), ds, ep, cells, derive_seed(tc.seed, "cli_eval"),
                                tc.l2_normalize_features);

  const std::string path = (fs::path(args.out_dir) / "metrics.txt").string();
  std::ofstream out(path, std::ios::trunc);
  TSGAN_CHECK(out.good(), Io, "cannot write " + path);
  out << table.text() << "\n" << table.report();
  out.flush();
  TSGAN_CHECK(out.good(), Io, "write failed: " + path);
  std::cout << table.text() << "report: " << path << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& data_path,
               const std::string& checkpoint_path, int n_queries, int top_k) {
  ConfigFile cf = load_config(args.config_path);
  TrainConfig tc = cf.train_config();
  SyntheticConfig sc = cf.synthetic_config();
  EvalProtocol ep = cf.eval_protocol();
  if (args.seed >= 0) tc.seed = static_cast<std::uint64_t>(args.seed);
  write_run_stamp(args.out_dir, tc, sc, ep);

  Trainer tr = trainer_from_checkpoint(checkpoint_path, tc);

  // translation grid: RGB / G_I(RGB) / IR / G_R(IR) for a few identities
  Dataset train_ds = train_data(data_path, sc);
  Rng rng(derive_seed(tc.seed, "report"));
  ImageBatch b = pk_sample(train_ds, 1, std::min(4, train_ds.n_identities()), rng);
  Tensor fake_ir, fake_rgb;
  {
    NoGradGuard ng;
    fake_ir = tr.gen_ir().forward(
        Tensor::from_array(Shape{b.pairs(), 3, b.height, b.width}, b.rgb), false);
    fake_rgb = tr.gen_rgb().forward(
        Tensor::from_array(Shape{b.pairs(), 1, b.height, b.width}, b.ir), false);
  }
  std::vector<std::vector<GridCell>> rows;
  for (Eigen::Index i = 0; i < b.pairs(); ++i) {
    const int id = b.identities[static_cast<std::size_t>(i)];
    rows.push_back(
        {{image_from(b.rgb, i, 3, b.height, b.width, id, Modality::RGB), 0},
         {image_from(fake_ir.value(), i, 1, b.height, b.width, id, Modality::IR), 0},
         {image_from(b.ir, i, 1, b.height, b.width, id, Modality::IR), 0},
         {image_from(fake_rgb.value(), i, 3, b.height, b.width, id, Modality::RGB), 0}});
  }
  const std::string translation_path = (fs::path(args.out_dir) / "translation.png").string();
  export_image_grid(translation_path, rows);

  // retrieval grid + metrics table on the held-out set
  Dataset ds = eval_data(data_path.empty() ? "" : data_path, sc);
  Rng split_rng(derive_seed(tc.seed, "report_split"));
  ProtocolSplit split = build_protocol_split(ds, ep.mode, ep.shot, split_rng);
  Eigen::MatrixXd q = extract_features(tr.student(), ds, split.query, 32,
                                       tc.l2_normalize_features);
  Eigen::MatrixXd g = extract_features(tr.student(), ds, split.gallery, 32,
                                       tc.l2_normalize_features);
  Eigen::MatrixXd d = distance_matrix(q, g);
  const std::string retrieval_path = (fs::path(args.out_dir) / "retrieval.png").string();
  export_retrieval_grid(retrieval_path, ds, split.query, split.gallery, d,
                        std::min<int>(n_queries, static_cast<int>(split.query.size())), top_k);

  MetricsTable table = evaluate_features(
      extract_features(tr.student(), ds,
                       [&] {
                         std::vector<int> all(ds.items.size());
                         for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                         return all;
                       }(),
                       32, tc.l2_normalize_features),
      ds, ep, standard_cells(), derive_seed(tc.seed, "cli_eval"));
  const std::string summary_path = (fs::path(args.out_dir) / "summary.txt").string();
  std::ofstream out(summary_path, std::ios::trunc);
  TSGAN_CHECK(out.good(), Io, "cannot write " + summary_path);
  out << "tsgan " << kToolVersion << "\ncheckpoint: " << checkpoint_path << "\n\n"
      << table.text() << "\n" << table.report();
  out.flush();
  TSGAN_CHECK(out.good(), Io, "write failed: " + summary_path);

  std::cout << "wrote " << translation_path << "\n"
            << "wrote " << retrieval_path << "\n"
            << "wrote " << summary_path << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"TS-GAN cross-modality person re-identification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("tsgan ") + kToolVersion);

  CommonArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth-data", "generate a paired-modality dataset");
  add_common(synth, synth_args);

  CommonArgs pre_args;
  std::string pre_data;
  CLI::App* pre = app.add_subcommand("pretrain-teacher", "train the frozen IR teacher");
  add_common(pre, pre_args);
  pre->add_option("--data", pre_data, "training manifest (synthetic when omitted)");

  CommonArgs train_args;
  std::string tr_data, tr_teacher, tr_resume, tr_eval_data;
  int tr_eval_every = 0;
  CLI::App* train = app.add_subcommand("train", "run the three-phase training loop");
  add_common(train, train_args);
  train->add_option("--data", tr_data, "training manifest (synthetic when omitted)");
  train->add_option("--teacher", tr_teacher, "pretrained teacher checkpoint");
  train->add_option("--checkpoint", tr_resume, "checkpoint to resume from");
  train->add_option("--eval-data", tr_eval_data, "held-out manifest for snapshots");
  train->add_option("--eval-every", tr_eval_every, "epochs between metric snapshots");

  CommonArgs eval_args;
  std::string ev_data, ev_checkpoint, ev_protocol;
  bool ev_rerank = false;
  int ev_trials = 0;
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on the retrieval protocol");
  add_common(eval, eval_args);
  eval->add_option("--data", ev_data, "evaluation manifest (synthetic when omitted)");
  eval->add_option("--checkpoint", ev_checkpoint, "training checkpoint to score");
  eval->add_option("--protocol", ev_protocol, "single cell <mode>,<shot>; all four when omitted");
  eval->add_flag("--rerank", ev_rerank, "apply k-reciprocal re-ranking");
  eval->add_option("--trials", ev_trials, "gallery resamples per cell");

  CommonArgs rep_args;
  std::string rep_data, rep_checkpoint;
  int rep_queries = 6, rep_topk = 6;
  CLI::App* report = app.add_subcommand("report", "render translation and retrieval grids");
  add_common(report, rep_args);
  report->add_option("--data", rep_data, "dataset manifest (synthetic when omitted)");
  report->add_option("--checkpoint", rep_checkpoint, "training checkpoint to render");
  report->add_option("--queries", rep_queries, "retrieval grid rows");
  report->add_option("--top-k", rep_topk, "retrieved images per row");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (pre->parsed()) return cmd_pretrain(pre_args, pre_data);
    if (train->parsed())
      return cmd_train(train_args, tr_data, tr_teacher, tr_resume, tr_eval_data, tr_eval_every);
    if (eval->parsed())
      return cmd_eval(eval_args, ev_data, ev_checkpoint, ev_protocol, ev_rerank, ev_trials);
    if (report->parsed()) return cmd_report(rep_args, rep_data, rep_checkpoint, rep_queries,
                                            rep_topk);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << category_name(e.category()) << " error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tsgan::cli
