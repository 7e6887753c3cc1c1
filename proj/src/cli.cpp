#include "afp/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "afp/frame_gen.hpp"
#include "afp/gradcheck.hpp"
#include "afp/pipeline.hpp"

namespace fs = std::filesystem;

namespace afp {

namespace {

int log_level() {
  const char* v = std::getenv("AFPC_LOG");
  if (!v) return 1;
  const std::string s = v;
  if (s == "0" || s == "quiet" || s == "error") return 0;
  if (s == "2" || s == "debug") return 2;
  return 1;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, patch_in, patch_out, stride, frames_in, frames_out, unroll, count, eval_frames;
  bool deterministic = false;
  bool greedy = false;
  std::optional<std::string> out, input, model;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key = value config file");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--threads", f.threads, "worker threads");
  sub->add_flag("--deterministic", f.deterministic, "fixed-order execution (outputs never depend on threads)");
  sub->add_option("--out", f.out, "output path");
  sub->add_option("--patch-in", f.patch_in, "input patch size");
  sub->add_option("--patch-out", f.patch_out, "output patch size");
  sub->add_option("--stride", f.stride, "patch stride");
  sub->add_option("--frames-in", f.frames_in, "conditioning frames (K)");
  sub->add_option("--frames-out", f.frames_out, "generated frames");
  sub->add_option("--set", f.sets, "extra key=value override (repeatable)");
}

RunConfig build_config(const Flags& f) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!f.config.empty()) {
    try {
      pairs = RunConfig::parse_text(read_file(f.config), f.config);
    } catch (const IoError& e) {
      throw UsageError(std::string("config file: ") + e.what());
    }
  }
  auto put = [&](const char* k, const auto& v) {
    if (v) pairs.emplace_back(k, std::to_string(*v));
  };
  put("seed", f.seed);
  put("threads", f.threads);
  put("patch_in", f.patch_in);
  put("patch_out", f.patch_out);
  put("stride", f.stride);
  put("frames_in", f.frames_in);
  put("frames_out", f.frames_out);
  put("unroll", f.unroll);
  put("count", f.count);
  if (f.deterministic) pairs.emplace_back("deterministic", "true");
  if (f.greedy) pairs.emplace_back("greedy", "true");
  if (f.out) pairs.emplace_back("out", *f.out);
  if (f.input) pairs.emplace_back("input", *f.input);
  if (f.model) pairs.emplace_back("model", *f.model);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    std::string k = s.substr(0, eq);
    std::replace(k.begin(), k.end(), '-', '_');
    pairs.emplace_back(k, s.substr(eq + 1));
  }
  // The channel list follows frames_in unless given explicitly.
  const bool explicit_channels = std::any_of(pairs.begin(), pairs.end(), [](auto& p) { return p.first == "channels"; });
  RunConfig cfg = RunConfig::from_pairs(pairs);
  if (!explicit_channels) cfg.channels.front() = 6 * (cfg.frames_in - 1);
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required ") + flag);
}

std::vector<std::string> list_files(const std::string& path, const std::string& ext) {
  std::error_code ec;
  if (fs::is_regular_file(path, ec)) return {path};
  if (!fs::is_directory(path, ec)) throw IoError("no such file or directory: " + path);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no " + ext + " files in " + path);
  return out;
}

std::string numbered(const std::string& dir, const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d%s", stem, i, ext);
  return (fs::path(dir) / buf).string();
}

class Ctx {
 public:
  Ctx(std::ostream& out, std::ostream& err) : out(out), err(err), level_(log_level()) {}
  void info(const std::string& s) const {
    if (level_ >= 1) err << "afpc: " << s << std::endl;
  }
  void debug(const std::string& s) const {
    if (level_ >= 2) err << "afpc: " << s << std::endl;
  }
  std::ostream& out;
  std::ostream& err;

 private:
  int level_;
};

GridSpec grid_for_frames(const RunConfig& cfg, int rows, int cols, const std::string& what) {
  try {
    return make_grid(rows, cols, cfg.patch_in, cfg.patch_out, cfg.stride, cfg.stride);
  } catch (const ConfigError& e) {
    throw FormatError(what + ": frame " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " does not fit the patch grid: " + e.what());
  }
}

// --- subcommands ------------------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const Ctx& ctx) {
  require(cfg.out, "--out");
  std::vector<Bitmap> digits;
  if (!cfg.digits.empty()) digits = load_idx_images(cfg.digits);
  const auto gp = generator_params(cfg, cfg.digits.empty() ? nullptr : &digits);
  const auto recs = generate_moving_shapes(cfg.seed, cfg.count, gp, cfg.threads);
  fs::create_directories(cfg.out);
  for (std::size_t i = 0; i < recs.size(); ++i) write_tseq(numbered(cfg.out, "seq", int(i), ".tseq"), recs[i]);
  ctx.info("wrote " + std::to_string(recs.size()) + " sequences to " + cfg.out);
}

void cmd_extract(const RunConfig& cfg, const Ctx& ctx) {
  require(cfg.input, "--input");
  require(cfg.out, "--out");
  const auto files = list_files(cfg.input, ".tseq");
  fs::create_directories(cfg.out);
  for (const auto& file : files) {
    const auto rec = read_tseq(file);
    if (rec.frames.size() < 2) throw FormatError(file + ": need at least 2 frames to extract fields");
    const GridSpec grid = grid_for_frames(cfg, rec.frames[0].rows, rec.frames[0].cols, file);
    const auto fields = extract_sequence(rec.frames, grid, cfg.extractor, cfg.threads);
    const auto target = (fs::path(cfg.out) / fs::path(file).filename().replace_extension(".tfld")).string();
    write_tfld(target, fields);
    ctx.debug(file + " -> " + target);
  }
  ctx.info("extracted " + std::to_string(files.size()) + " sequences into " + cfg.out);
}

void cmd_train(const RunConfig& cfg, const Ctx& ctx) {
  require(cfg.input, "--input");
  require(cfg.out, "--out");
  const PredictorConfig pc = cfg.predictor();
  std::vector<std::vector<AffineField>> seqs;
  for (const auto& file : list_files(cfg.input, ".tfld")) {
    auto fields = read_tfld(file);
    for (const auto& f : fields)
      if (f.n_r != pc.grid.n_r || f.n_c != pc.grid.n_c)
        throw FormatError(file + ": field grid " + std::to_string(f.n_r) + "x" + std::to_string(f.n_c) +
                          " does not match the configured " + std::to_string(pc.grid.n_r) + "x" +
                          std::to_string(pc.grid.n_c));
    seqs.push_back(std::move(fields));
  }
  const auto samples = make_samples(seqs, pc.inputs, pc.unroll);
  if (samples.empty())
    throw UsageError("no training windows: sequences need " + std::to_string(pc.inputs + pc.unroll) + " fields");
  ctx.info("training on " + std::to_string(samples.size()) + " windows, M=" + std::to_string(pc.unroll));
  const auto res = train_predictor(samples, pc, cfg.threads);
  for (std::size_t e = 0; e < res.loss_history.size(); ++e)
    ctx.debug("epoch " + std::to_string(e + 1) + " loss " + std::to_string(res.loss_history[e]));
  write_checkpoint(cfg.out, res.model);
  ctx.info("final loss " + std::to_string(res.model.final_loss) + ", checkpoint " + cfg.out);
}

void cmd_rollout(const RunConfig& cfg, const Ctx& ctx) {
  require(cfg.model, "--model");
  require(cfg.input, "--input");
  require(cfg.out, "--out");
  const PredictorModel model = read_checkpoint(cfg.model);
  const auto rec = read_tseq(cfg.input);
  const int n = model.config.inputs + 1;
  if (static_cast<int>(rec.frames.size()) < n)
    throw FormatError(cfg.input + ": has " + std::to_string(rec.frames.size()) + " frames, model needs " +
                      std::to_string(n) + " seed frames");
  const GridSpec& g = model.config.grid;
  if (rec.frames[0].rows != g.rows || rec.frames[0].cols != g.cols)
    throw FormatError(cfg.input + ": frames are " + std::to_string(rec.frames[0].rows) + "x" +
                      std::to_string(rec.frames[0].cols) + ", model grid expects " + std::to_string(g.rows) + "x" +
                      std::to_string(g.cols));
  RolloutConfig rc{n, cfg.frames_out};
  const std::vector<Frame> seed(rec.frames.begin(), rec.frames.begin() + n);
  const auto res = rollout(model, seed, rc, cfg.extractor, cfg.threads);
  fs::create_directories(cfg.out);
  SequenceRecord gen;
  gen.frames = res.frames;
  gen.provenance.source = "generated";
  write_tseq((fs::path(cfg.out) / "rollout.tseq").string(), gen);
  write_tfld((fs::path(cfg.out) / "rollout.tfld").string(), res.fields);
  for (std::size_t i = 0; i < res.frames.size(); ++i)
    export_pgm(res.frames[i], numbered(cfg.out, "frame", int(i), ".pgm"));
  ctx.info("generated " + std::to_string(res.frames.size()) + " frames into " + cfg.out);
}

void cmd_train_classifier(const RunConfig& cfg, int t, const Ctx& ctx) {
  require(cfg.input, "--input");
  require(cfg.out, "--out");
  std::vector<SequenceRecord> recs;
  for (const auto& file : list_files(cfg.input, ".tseq")) recs.push_back(read_tseq(file));
  // Last tenth held out for validation.
  const std::size_t n_val = recs.size() >= 10 ? recs.size() / 10 : 0;
  std::vector<SequenceRecord> val(recs.end() - n_val, recs.end());
  recs.resize(recs.size() - n_val);
  ClassifierConfig cc = cfg.classifier;
  cc.seed = cfg.seed;
  const auto model = train_classifier(recs, val, cfg.frames_in, t, cc, cfg.threads);
  write_classifier(cfg.out, model);
  if (n_val) ctx.info("validation accuracy " + std::to_string(model.validation_accuracy));
  ctx.info("classifier (T=" + std::to_string(t) + ") written to " + cfg.out);
}

void cmd_bench(const RunConfig& cfg, const Ctx& ctx) {
  const auto res = run_desk_benchmark(cfg, [&](const std::string& s) { ctx.info(s); });
  const std::string csv = res.report.to_csv();
  const std::string table = res.report.to_table();
  if (cfg.out.empty()) {
    ctx.out << csv;
  } else {
    write_file_atomic((fs::path(cfg.out) / "report.csv").string(), csv);
    write_file_atomic((fs::path(cfg.out) / "report.txt").string(), table);
    ctx.out << table;
  }
  for (std::size_t i = 0; i < res.seeds.size() && i < res.unrolled_final_step_mse.size(); ++i)
    ctx.info("seed " + std::to_string(res.seeds[i]) + " final-step MSE: greedy " +
             std::to_string(res.greedy_final_step_mse[i]) + ", unrolled " +
             std::to_string(res.unrolled_final_step_mse[i]));
}

int cmd_gradcheck(const RunConfig& cfg, const Ctx& ctx) {
  GradCheckConfig gc;
  gc.seed = cfg.seed;
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(gc)) {
    char line[160];
    std::snprintf(line, sizeof line, "%-4s %-26s max_rel_err=%.3e checked=%d skipped=%d\n", r.passed ? "ok" : "FAIL",
                  r.name.c_str(), r.max_rel_error, r.checked, r.skipped);
    ctx.out << line;
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Ctx ctx(out, err);
  CLI::App app{"Affine-field video frame prediction toolkit", "afpc"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "write labeled synthetic sequences (TSEQ)");
  add_common(gen, f);
  gen->add_option("--count", f.count, "number of sequences");
  auto* ext = app.add_subcommand("extract", "TSEQ files -> affine fields (TFLD)");
  add_common(ext, f);
  ext->add_option("--input", f.input, "TSEQ file or directory");
  auto* train = app.add_subcommand("train", "TFLD files -> predictor checkpoint (AFPM)");
  add_common(train, f);
  train->add_option("--input", f.input, "TFLD file or directory");
  train->add_option("--unroll", f.unroll, "unrolled steps M");
  train->add_flag("--greedy", f.greedy, "one-step training (M = 1)");
  auto* roll = app.add_subcommand("rollout", "checkpoint + seed frames -> generated TSEQ and PGM frames");
  add_common(roll, f);
  roll->add_option("--model", f.model, "AFPM checkpoint");
  roll->add_option("--input", f.input, "TSEQ holding the seed frames");
  auto* tc = app.add_subcommand("train-classifier", "labeled TSEQ files -> motion classifier (AFPK)");
  add_common(tc, f);
  tc->add_option("--input", f.input, "TSEQ directory");
  tc->add_option("--eval-frames", f.eval_frames, "frames T seen by the classifier");
  auto* bench = app.add_subcommand("bench", "full benchmark; CSV report");
  add_common(bench, f);
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, f);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "afpc: " << e.what() << "\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    RunConfig cfg = build_config(f);
    if (cfg.deterministic) ctx.debug("deterministic mode");
    cfg.validate();
    ctx.debug("config:\n" + cfg.to_text());
    if (app.got_subcommand(gen)) cmd_gen_data(cfg, ctx);
    else if (app.got_subcommand(ext)) cmd_extract(cfg, ctx);
    else if (app.got_subcommand(train)) cmd_train(cfg, ctx);
    else if (app.got_subcommand(roll)) cmd_rollout(cfg, ctx);
    else if (app.got_subcommand(tc)) cmd_train_classifier(cfg, f.eval_frames.value_or(cfg.eval_frames.front()), ctx);
    else if (app.got_subcommand(bench)) cmd_bench(cfg, ctx);
    else if (app.got_subcommand(gc)) return cmd_gradcheck(cfg, ctx);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "afpc: usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "afpc: configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "afpc: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    err << "afpc: format error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "afpc: I/O error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "afpc: error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace afp
