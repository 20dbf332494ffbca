#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "inrprop/config.hpp"
#include "inrprop/error.hpp"
#include "inrprop/io.hpp"
#include "inrprop/metrics.hpp"
#include "inrprop/pipeline.hpp"
#include "inrprop/service.hpp"
#include "inrprop/synth.hpp"

namespace inrprop::cli {

namespace fs = std::filesystem;

namespace {

// Prints one line per epoch decile.
class Progress {
 public:
  Progress(std::ostream& err, std::string label) : err_(err), label_(std::move(label)) {}
  void operator()(int epoch, int epochs, double loss) {
    const int decile = (epoch + 1) * 10 / epochs;
    if (decile == last_) return;
    last_ = decile;
    std::ostringstream line;
    line << label_ << ": epoch " << epoch + 1 << "/" << epochs << " (" << decile * 10 << "%) loss " << loss << "\n";
    err_ << line.str() << std::flush;
  }

 private:
  std::ostream& err_;
  std::string label_;
  int last_ = 0;
};

// Options shared by commands that take a run config.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config JSON (flags override it)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Global seed");
  }
  void add_threads(CLI::App* cmd) { cmd->add_option("--threads", threads, "Worker cap (default: INRPROP_THREADS or 1)")->check(CLI::PositiveNumber); }

  RunConfig load() const {
    RunConfig c;
    if (!config_path.empty()) c = run_config_from_json(read_json(config_path));
    if (seed) {
      c.seed = *seed;
      c.field.seed = *seed;
      c.flow.seed = *seed;
    }
    return c;
  }

  int thread_count() const {
    if (threads) return *threads;
    if (const char* env = std::getenv("INRPROP_THREADS")) {
      try {
        const int n = std::stoi(env);
        if (n >= 1) return n;
      } catch (const std::exception&) {
      }
      throw ConfigError(std::string("INRPROP_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
  }
};

template <typename T>
void apply(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

// Loads each checkpoint once so that two references to one file share a
// pointer (and so form an intra-video pair).
class FieldCache {
 public:
  std::shared_ptr<const FeatureField> get(const std::string& path) {
    const std::string key = fs::weakly_canonical(path).string();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto field = std::make_shared<const FeatureField>(decode_feature_field(read_file(path)));
    cache_.emplace(key, field);
    return field;
  }

 private:
  std::map<std::string, std::shared_ptr<const FeatureField>> cache_;
};

void write_json_out(std::ostream& out, const nlohmann::json& j) { out << dump_json(j); }

std::string resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q.string() : (base_dir / q).string();
}

// --- fit-features ------------------------------------------------------------

struct FitFeaturesArgs {
  Common common;
  std::string fvol, out, trace, video_id;
  std::optional<int> epochs, hr, hr_width, cells, steps;
  std::optional<double> lr, omega0;
  std::optional<std::uint32_t> hidden, layers, n_freq;
  std::optional<std::string> activation;
};

void add_field_flags(CLI::App* cmd, FitFeaturesArgs& a) {
  cmd->add_option("--epochs", a.epochs, "Training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--hr", a.hr, "High-resolution canvas height")->check(CLI::PositiveNumber);
  cmd->add_option("--hr-width", a.hr_width, "High-resolution canvas width (default keeps aspect)");
  cmd->add_option("--cells", a.cells, "LR cells per optimizer step")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", a.steps, "Optimizer steps per epoch")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--omega0", a.omega0, "Sine frequency factor");
  cmd->add_option("--hidden", a.hidden, "Hidden width");
  cmd->add_option("--layers", a.layers, "Hidden layer count");
  cmd->add_option("--activation", a.activation, "sine | relu | relu_pe");
  cmd->add_option("--frequencies", a.n_freq, "Positional-encoding frequencies for relu_pe");
}

FieldFitConfig field_config(const FitFeaturesArgs& a, RunConfig& rc) {
  FieldFitConfig& c = rc.field;
  apply(a.epochs, c.epochs);
  apply(a.hr, c.hr_size);
  apply(a.hr_width, c.hr_width);
  apply(a.cells, c.cells_per_step);
  apply(a.steps, c.steps_per_epoch);
  apply(a.lr, c.lr);
  apply(a.omega0, c.omega0);
  apply(a.hidden, c.hidden_dim);
  apply(a.layers, c.n_hidden_layers);
  apply(a.n_freq, c.n_frequencies);
  if (a.activation) c.activation = activation_from_string(*a.activation);
  c.validate();
  return c;
}

FeatureVolume load_volume(const std::string& path, std::ostream& err) {
  FvolLoad load = read_fvol(path);
  if (load.renormalized > 0)
    err << "warning: " << path << ": renormalized " << load.renormalized << " feature vectors\n";
  return std::move(load.volume);
}

int fit_features(const FitFeaturesArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = a.common.load();
  const FieldFitConfig cfg = field_config(a, rc);
  const FeatureVolume volume = load_volume(a.fvol, err);
  Progress progress(err, "fit-features");
  FieldFit fit = fit_feature_field(volume, cfg, std::ref(progress));
  fit.field.set_video_id(a.video_id.empty() ? fs::path(a.fvol).stem().string() : a.video_id);
  const std::string trace = a.trace.empty() ? a.out + ".loss.csv" : a.trace;
  atomic_write(a.out, encode_feature_field(fit.field, field_meta(volume, cfg, fit)));
  atomic_write(trace, loss_trace_csv(fit.loss_trace));
  write_json_out(out, {{"out", a.out},
                       {"trace", trace},
                       {"video_id", fit.field.video_id()},
                       {"canvas", {{"width", fit.field.canvas().width}, {"height", fit.field.canvas().height}}},
                       {"param_count", fit.field.net().config().parameter_count()},
                       {"final_loss", fit.loss_trace.back()},
                       {"config", to_json(cfg)}});
  return kOk;
}

// --- fit-flow ----------------------------------------------------------------

struct FitFlowArgs {
  Common common;
  std::string src, tgt, out, pairs, synth;
  std::optional<int> epochs, sample_grid, tv_grid;
  std::optional<double> lr, lambda_tv, lambda_l1;
};

struct FlowJob {
  std::string src, tgt, out;
};

std::vector<FlowJob> read_manifest(const std::string& path) {
  const nlohmann::json j = read_json(path);
  const nlohmann::json& list = j.is_object() && j.contains("pairs") ? j.at("pairs") : j;
  if (!list.is_array() || list.empty()) throw SchemaError("pairs", "manifest must list at least one pair");
  const fs::path dir = fs::path(path).parent_path();
  std::vector<FlowJob> jobs;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string at = "pairs[" + std::to_string(i) + "]";
    const auto& e = list[i];
    FlowJob job;
    for (auto [key, dst] : {std::pair{"src", &job.src}, std::pair{"tgt", &job.tgt}, std::pair{"out", &job.out}}) {
      if (!e.is_object() || !e.contains(key) || !e.at(key).is_string())
        throw SchemaError(at + "." + key, "must be a string");
      *dst = e.at(key).get<std::string>();
    }
    const FrameRef s = parse_frame_ref(job.src), t = parse_frame_ref(job.tgt);
    job.src = resolve(dir, s.name) + (s.frame ? ":" + std::to_string(*s.frame) : "");
    job.tgt = resolve(dir, t.name) + (t.frame ? ":" + std::to_string(*t.frame) : "");
    job.out = resolve(dir, job.out);
    jobs.push_back(std::move(job));
  }
  return jobs;
}

int fit_flow(const FitFlowArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = a.common.load();
  FlowFitConfig& cfg = rc.flow;
  apply(a.epochs, cfg.epochs);
  apply(a.sample_grid, cfg.sample_grid);
  apply(a.tv_grid, cfg.tv_grid);
  apply(a.lr, cfg.lr);
  apply(a.lambda_tv, cfg.lambda_tv);
  apply(a.lambda_l1, cfg.lambda_l1);
  cfg.validate();
  const int threads = a.common.thread_count();

  std::vector<FlowJob> jobs;
  if (!a.pairs.empty()) {
    if (!a.src.empty() || !a.tgt.empty() || !a.out.empty())
      throw ConfigError("--pairs cannot be combined with --src/--tgt/--out");
    jobs = read_manifest(a.pairs);
  } else {
    if (a.src.empty() || a.tgt.empty() || a.out.empty())
      throw ConfigError("fit-flow needs --src, --tgt and --out, or --pairs");
    jobs.push_back({a.src, a.tgt, a.out});
  }

  std::optional<SynthVolume> synth;
  if (!a.synth.empty()) synth = make_volume(read_json(a.synth).get<SynthSpec>());

  FieldCache cache;
  std::vector<PairSpec> pairs;
  for (const FlowJob& job : jobs) {
    const FrameRef s = parse_frame_ref(job.src), t = parse_frame_ref(job.tgt);
    pairs.push_back(make_pair(cache.get(s.name), s.frame.value_or(0), cache.get(t.name), t.frame.value_or(0)));
    pairs.back().validate();
  }

  std::vector<DisplacementField> fields;
  if (pairs.size() == 1) {
    Progress progress(err, "fit-flow");
    fields.push_back(fit_displacement(pairs[0], cfg, std::ref(progress)));
  } else {
    err << "fit-flow: fitting " << pairs.size() << " pairs on " << threads << " thread(s)\n";
    FlowBatchResult r = fit_displacements_batch(pairs, cfg, threads);
    if (r.first_error) {
      const std::string msg = "pair " + std::to_string(r.first_error->index) + ": " + r.first_error->message;
      if (r.first_error->error_class == ErrorClass::divergence) throw DivergenceError(msg);
      throw StageError("fit_flow", msg, r.first_error->error_class);
    }
    for (auto& f : r.fields) fields.push_back(std::move(*f));
  }

  nlohmann::json report = nlohmann::json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const DisplacementField& d = fields[i];
    atomic_write(jobs[i].out, encode_displacement(d, {{"config", to_json(cfg)}}));
    nlohmann::json row = {{"src", jobs[i].src},
                          {"tgt", jobs[i].tgt},
                          {"out", jobs[i].out},
                          {"final_loss", d.loss_trace().back()},
                          {"mean_abs_displacement", mean_displacement_magnitude(d, d.canvas(), 32)}};
    if (synth) {
      const Canvas c = d.canvas();
      if (!pairs[i].intra_video()) throw ConfigError("--synth needs an intra-video pair");
      const double scale = static_cast<double>(c.width) / synth->volume.width;
      const WarpDisplacement truth(synth->warp, pairs[i].tgt_t - pairs[i].src_t, scale);
      row["epe"] = oracle_endpoint_error(d, truth, c);
    }
    report.push_back(std::move(row));
  }
  write_json_out(out, {{"pairs", report}, {"config", to_json(cfg)}});
  return kOk;
}

// --- propagate ---------------------------------------------------------------

struct PropagateArgs {
  Common common;
  std::string annotation, src_field, tgt_field, disp, mode = "points", out, mask, mask_out, prob_out;
  std::optional<double> kde_sigma, kde_tau, d_min, match_sigma, stride;
};

int propagate(const PropagateArgs& a, std::ostream& out, std::ostream&) {
  RunConfig rc = a.common.load();
  apply(a.kde_sigma, rc.kde.sigma);
  apply(a.kde_tau, rc.kde.tau);
  apply(a.d_min, rc.interior.d_min);
  if (a.match_sigma) rc.match.sigma = *a.match_sigma;
  apply(a.stride, rc.match.search_stride);
  rc.match.validate();
  rc.interior.validate();
  rc.kde.validate();

  const AnnotationDoc ann = read_annotation(a.annotation);
  FieldCache cache;
  const auto src = cache.get(a.src_field);
  const auto tgt = cache.get(a.tgt_field);
  nlohmann::json disp_meta;
  const DisplacementField disp = decode_displacement(read_file(a.disp), &disp_meta);
  if (disp_meta.contains("config") && disp_meta["config"].contains("seed"))
    rc.flow.seed = disp_meta["config"]["seed"].get<std::uint64_t>();
  const PairSpec pair = make_pair(src, ann.frame, tgt, disp.meta().tgt_t);

  std::optional<BinaryMask> mask;
  if (a.mode == "mask") {
    std::string mask_path = a.mask;
    if (mask_path.empty() && ann.mask_ref) mask_path = resolve(fs::path(a.annotation).parent_path(), *ann.mask_ref);
    if (mask_path.empty()) throw SchemaError("mask_ref", "mask mode needs a mask_ref or --mask");
    mask = decode_pgm(read_file(mask_path));
  }

  PropagationRun run = propagate_annotation(ann, mask, pair, disp, rc, a.mode);
  if (run.mask) {
    const fs::path out_dir = fs::path(a.out).parent_path();
    const std::string mask_out = a.mask_out.empty() ? fs::path(a.out).replace_extension(".mask.pgm").string() : a.mask_out;
    atomic_write(mask_out, encode_pgm(run.mask->mask));
    run.doc.mask_outputs["mask"] = fs::path(mask_out).lexically_relative(out_dir.empty() ? "." : out_dir).string();
    if (!a.prob_out.empty()) {
      atomic_write(a.prob_out, encode_probability_pgm(run.mask->field));
      run.doc.mask_outputs["probability"] =
          fs::path(a.prob_out).lexically_relative(out_dir.empty() ? "." : out_dir).string();
    }
  }
  write_propagation(run.doc, a.out);
  nlohmann::json summary = {{"out", a.out}, {"mode", a.mode}, {"results", run.doc.results.size()}};
  if (run.mask) summary["mask_outputs"] = run.doc.mask_outputs;
  write_json_out(out, summary);
  return kOk;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string pred, gt, metric, format = "json", out;
};

struct PointSet {
  std::vector<std::vector<Point2>> frames;
  std::optional<Canvas> canvas;
};

std::vector<Point2> points_of(const nlohmann::json& j, std::optional<Canvas>& canvas) {
  if (j.is_object() && j.contains("results")) {
    const PropagationDoc doc = parse_propagation(j);
    if (doc.source.is_object() && doc.source.contains("canvas")) canvas = parse_annotation(doc.source).canvas;
    std::vector<Point2> pts;
    for (const auto& r : doc.results) pts.push_back(r.predicted);
    return pts;
  }
  const AnnotationDoc doc = parse_annotation(j);
  canvas = doc.canvas;
  return doc.point_list();
}

PointSet read_points(const std::string& path) {
  const nlohmann::json j = read_json(path);
  PointSet s;
  if (j.is_array()) {
    for (const auto& e : j) s.frames.push_back(points_of(e, s.canvas));
  } else {
    s.frames.push_back(points_of(j, s.canvas));
  }
  return s;
}

BinaryMask read_mask_any(const std::string& path) {
  if (fs::path(path).extension() == ".pgm") return decode_pgm(read_file(path));
  const nlohmann::json j = read_json(path);
  const fs::path dir = fs::path(path).parent_path();
  if (j.is_object() && j.contains("mask_outputs")) {
    const PropagationDoc doc = parse_propagation(j);
    if (!doc.mask_outputs.contains("mask") || !doc.mask_outputs["mask"].is_string())
      throw SchemaError("mask_outputs.mask", "propagation document has no mask output");
    return decode_pgm(read_file(resolve(dir, doc.mask_outputs["mask"].get<std::string>())));
  }
  const AnnotationDoc doc = parse_annotation(j);
  if (!doc.mask_ref) throw SchemaError("mask_ref", "annotation has no mask");
  return decode_pgm(read_file(resolve(dir, *doc.mask_ref)));
}

int eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const RunConfig rc = a.common.load();
  const MetricsConfig& mc = rc.metrics;
  mc.validate();
  std::vector<MetricRecord> records;
  if (a.metric == "dice") {
    const BinaryMask p = read_mask_any(a.pred), g = read_mask_any(a.gt);
    if (p.canvas() != g.canvas()) throw ContractViolation("prediction and ground-truth masks differ in size");
    records.push_back({"dice", "dice", dice(p, g), 1, nlohmann::json::object()});
  } else {
    const PointSet p = read_points(a.pred), g = read_points(a.gt);
    if (!g.canvas) throw SchemaError("canvas", "ground truth has no canvas");
    if (p.frames.size() != g.frames.size())
      throw ContractViolation("prediction has " + std::to_string(p.frames.size()) + " frames, ground truth " +
                              std::to_string(g.frames.size()));
    for (std::size_t f = 0; f < p.frames.size(); ++f)
      if (p.frames[f].size() != g.frames[f].size())
        throw ContractViolation("frame " + std::to_string(f) + ": " + std::to_string(p.frames[f].size()) +
                                " predicted points vs " + std::to_string(g.frames[f].size()) + " ground-truth points");
    std::size_t n = 0;
    for (const auto& f : g.frames) n += f.size();
    if (a.metric == "pck") {
      std::vector<Point2> pf, gf;
      for (std::size_t f = 0; f < p.frames.size(); ++f) {
        pf.insert(pf.end(), p.frames[f].begin(), p.frames[f].end());
        gf.insert(gf.end(), g.frames[f].begin(), g.frames[f].end());
      }
      const std::vector<double> v = pck(pf, gf, *g.canvas, mc);
      for (std::size_t i = 0; i < v.size(); ++i) {
        std::ostringstream label;
        label << "pck@" << mc.pck_thresholds[i];
        records.push_back({"pck", label.str(), v[i], n, {{"threshold", mc.pck_thresholds[i]}}});
      }
    } else {
      records.push_back({"delta_avg", "delta_avg", delta_avg(p.frames, g.frames, *g.canvas, mc), n,
                         {{"thresholds", mc.delta_thresholds}}});
    }
  }
  std::string text;
  if (a.format == "csv") {
    text = to_csv(records);
  } else {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : records) j.push_back(to_json(r));
    text = dump_json({{"metrics", j}, {"config", to_json(mc)}});
  }
  if (a.out.empty())
    out << text;
  else
    atomic_write(a.out, text);
  return kOk;
}

// --- synth / compare-arch ------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  SynthSpec spec = read_json(a.spec).get<SynthSpec>();
  apply(a.seed, spec.seed);
  FeatureVolume v = make_volume(spec).volume;
  v.source_tag = "synthetic " + to_string(spec.pattern.kind) + " " + to_string(spec.warp.kind);
  write_fvol(v, a.out);
  write_json_out(out, {{"out", a.out}, {"spec", spec}});
  return kOk;
}

struct CompareArgs {
  FitFeaturesArgs field;
  std::string out;
};

int compare_arch(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = a.field.common.load();
  const FieldFitConfig cfg = field_config(a.field, rc);
  const FeatureVolume volume = load_volume(a.field.fvol, err);
  const std::vector<ActivationChoice> choices = {
      {Activation::sine, 0}, {Activation::relu_pe, cfg.n_frequencies}, {Activation::relu, 0}};
  err << "compare-arch: fitting " << choices.size() << " networks for " << cfg.epochs << " epochs each\n";
  const std::vector<ArchitectureRow> rows = compare_architectures(volume, cfg, choices);
  std::ostringstream csv;
  csv.precision(17);
  csv << "activation,final_loss,rmse,param_count\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    csv << r.label << "," << r.final_loss << "," << r.rmse << "," << r.param_count << "\n";
    j.push_back({{"activation", r.label}, {"final_loss", r.final_loss}, {"rmse", r.rmse}, {"param_count", r.param_count}});
  }
  atomic_write(a.out, csv.str());
  write_json_out(out, {{"out", a.out}, {"rows", j}, {"config", to_json(cfg)}});
  return kOk;
}

// --- serve -------------------------------------------------------------------

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<int> workers;
};

int serve(const ServeArgs& a, const Common& common, std::ostream& out, std::ostream& err) {
  ServiceOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  opts.workers = a.workers.value_or(common.thread_count());
  Service service(opts);
  const int port = service.bind();
  err << "serving on http://" << a.host << ":" << port << "\n";
  out << dump_json({{"host", a.host}, {"port", port}}) << std::flush;
  service.run();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-field annotation propagation engine", "inrprop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(engine_version()));

  FitFeaturesArgs ff;
  auto* c_ff = app.add_subcommand("fit-features", "Fit a feature field to an FVOL volume");
  c_ff->add_option("--fvol", ff.fvol, "Input FVOL")->required();
  c_ff->add_option("--out", ff.out, "Output field checkpoint")->required();
  c_ff->add_option("--trace", ff.trace, "Loss-trace CSV (default: <out>.loss.csv)");
  c_ff->add_option("--video-id", ff.video_id, "Video id stored in the checkpoint (default: FVOL file stem)");
  add_field_flags(c_ff, ff);
  ff.common.add(c_ff);

  FitFlowArgs fl;
  auto* c_fl = app.add_subcommand("fit-flow", "Fit displacement fields between field frames");
  c_fl->add_option("--src", fl.src, "Source FIELD[:t]");
  c_fl->add_option("--tgt", fl.tgt, "Target FIELD[:t]");
  c_fl->add_option("--out", fl.out, "Output displacement checkpoint");
  c_fl->add_option("--pairs", fl.pairs, "Batch manifest JSON: [{src, tgt, out}, ...]");
  c_fl->add_option("--synth", fl.synth, "Synth spec of the source volume; reports endpoint error against its warp");
  c_fl->add_option("--epochs", fl.epochs, "Training epochs")->check(CLI::PositiveNumber);
  c_fl->add_option("--lr", fl.lr, "Adam learning rate");
  c_fl->add_option("--lambda-tv", fl.lambda_tv, "Total-variation weight");
  c_fl->add_option("--lambda-l1", fl.lambda_l1, "L1 weight");
  c_fl->add_option("--sample-grid", fl.sample_grid, "Feature lattice points per axis");
  c_fl->add_option("--tv-grid", fl.tv_grid, "TV lattice points per axis");
  fl.common.add(c_fl);
  fl.common.add_threads(c_fl);

  PropagateArgs pr;
  auto* c_pr = app.add_subcommand("propagate", "Propagate a point or mask annotation through a displacement field");
  c_pr->add_option("--annotation", pr.annotation, "Annotation JSON")->required();
  c_pr->add_option("--src-field", pr.src_field, "Source feature-field checkpoint")->required();
  c_pr->add_option("--tgt-field", pr.tgt_field, "Target feature-field checkpoint")->required();
  c_pr->add_option("--disp", pr.disp, "Displacement checkpoint")->required();
  c_pr->add_option("--mode", pr.mode, "points | mask")->check(CLI::IsMember({"points", "mask"}));
  c_pr->add_option("--out", pr.out, "Output propagation JSON")->required();
  c_pr->add_option("--mask", pr.mask, "Source mask PGM (default: the annotation's mask_ref)");
  c_pr->add_option("--mask-out", pr.mask_out, "Output mask PGM (default: <out>.mask.pgm)");
  c_pr->add_option("--prob-out", pr.prob_out, "Also write the probability field as a 16-bit PGM");
  c_pr->add_option("--kde-sigma", pr.kde_sigma, "KDE bandwidth in pixels");
  c_pr->add_option("--kde-tau", pr.kde_tau, "KDE threshold");
  c_pr->add_option("--d-min", pr.d_min, "Minimum boundary distance of interior points");
  c_pr->add_option("--sigma", pr.match_sigma, "Matching prior width in pixels");
  c_pr->add_option("--stride", pr.stride, "Search lattice stride in pixels");
  pr.common.add(c_pr);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score predictions against ground truth");
  c_ev->add_option("--pred", ev.pred, "Prediction (propagation/annotation JSON, array of them, or PGM)")->required();
  c_ev->add_option("--gt", ev.gt, "Ground truth (annotation JSON, array of them, or PGM)")->required();
  c_ev->add_option("--metric", ev.metric, "pck | delta | dice")->required()->check(CLI::IsMember({"pck", "delta", "dice"}));
  c_ev->add_option("--format", ev.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  c_ev->add_option("--out", ev.out, "Write the report here instead of standard output");
  ev.common.add(c_ev);

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Write a synthetic FVOL volume");
  c_sy->add_option("--spec", sy.spec, "Synth spec JSON")->required();
  c_sy->add_option("--out", sy.out, "Output FVOL")->required();
  c_sy->add_option("--seed", sy.seed, "Override the spec seed");

  CompareArgs ca;
  auto* c_ca = app.add_subcommand("compare-arch", "Fit sine, relu_pe and relu fields under one budget");
  c_ca->add_option("--fvol", ca.field.fvol, "Input FVOL")->required();
  c_ca->add_option("--out", ca.out, "Output CSV")->required();
  add_field_flags(c_ca, ca.field);
  ca.field.common.add(c_ca);

  ServeArgs sv;
  Common sv_common;
  auto* c_sv = app.add_subcommand("serve", "Run the HTTP service");
  c_sv->add_option("--host", sv.host, "Bind address");
  c_sv->add_option("--port", sv.port, "Port (0 picks a free one)");
  c_sv->add_option("--workers", sv.workers, "Job worker count")->check(CLI::PositiveNumber);
  sv_common.add_threads(c_sv);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    // help and version requests exit 0 and print to `out`
    return app.exit(e, out, err) == 0 ? kOk : kInput;
  }

  try {
    if (*c_ff) return fit_features(ff, out, err);
    if (*c_fl) return fit_flow(fl, out, err);
    if (*c_pr) return propagate(pr, out, err);
    if (*c_ev) return eval(ev, out, err);
    if (*c_sy) return synth(sy, out, err);
    if (*c_ca) return compare_arch(ca, out, err);
    if (*c_sv) return serve(sv, sv_common, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    switch (classify(e)) {
      case ErrorClass::input: return kInput;
      case ErrorClass::divergence: return kDivergence;
      case ErrorClass::internal: return kInternal;
    }
  }
  return kInternal;
}

}  // namespace inrprop::cli
