#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "inrprop/io.hpp"
#include "inrprop/metrics.hpp"
#include "inrprop/pipeline.hpp"
#include "inrprop/synth.hpp"

using namespace inrprop;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class TempDir {
 public:
  TempDir() {
    static int n = 0;
    path_ = fs::temp_directory_path() / ("inrprop_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) { atomic_write(path, text); }

std::string read_text(const std::string& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

// Synthetic volume and a quickly fitted field on a 16 x 16 canvas.
void small_field(const TempDir& d, const std::string& pattern = "smooth_random") {
  write_text(d / "spec.json", R"({"frames": 2, "height": 16, "width": 16, "dim": 8, "seed": 1, "pattern": {"kind": ")" +
                                  pattern + R"("}})");
  REQUIRE(invoke({"synth", "--spec", d / "spec.json", "--out", d / "v.fvol"}).code == 0);
  const Run r = invoke({"fit-features", "--fvol", d / "v.fvol", "--out", d / "v.ffld", "--epochs", "100", "--steps",
                     "2", "--hr", "16", "--hidden", "64", "--seed", "1"});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("cli: every command has help and rejects unknown flags") {
  for (const char* cmd : {"fit-features", "fit-flow", "propagate", "eval", "synth", "compare-arch", "serve"}) {
    const Run h = invoke({cmd, "--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("Usage") != std::string::npos);
    const Run bad = invoke({cmd, "--no-such-flag", "1"});
    CHECK(bad.code == 2);
  }
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"no-such-command"}).code == 2);
  CHECK(invoke({"--version"}).out == "inrprop 0.1.0\n");
}

TEST_CASE("cli: synth writes the spec'd volume; constant spec round-trips to a constant volume") {
  TempDir d;
  write_text(d / "c.json", R"({"frames": 3, "height": 5, "width": 7, "dim": 4, "pattern": {"kind": "constant"}})");
  const Run r = invoke({"synth", "--spec", d / "c.json", "--out", d / "c.fvol"});
  REQUIRE(r.code == 0);
  const FvolLoad load = read_fvol(d / "c.fvol");
  CHECK(load.renormalized == 0);
  const FeatureVolume& v = load.volume;
  CHECK(v.frames == 3);
  CHECK(v.width == 7);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(v.data[i] == v.data[i % v.dim]);
  SynthSpec s = nlohmann::json::parse(read_text(d / "c.json")).get<SynthSpec>();
  CHECK(v.data == make_volume(s).volume.data);

  write_text(d / "bad.json", R"({"pattern": {"kind": "plaid"}})");
  const Run bad = invoke({"synth", "--spec", d / "bad.json", "--out", d / "x.fvol"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("pattern.kind") != std::string::npos);
}

TEST_CASE("cli: fit-features on a constant volume reaches a tiny loss, reproducibly") {
  TempDir d;
  write_text(d / "c.json", R"({"frames": 2, "height": 8, "width": 8, "dim": 8, "seed": 1, "pattern": {"kind": "constant"}})");
  REQUIRE(invoke({"synth", "--spec", d / "c.json", "--out", d / "c.fvol"}).code == 0);
  const std::vector<std::string> fit = {"fit-features", "--fvol", d / "c.fvol", "--epochs", "300", "--steps", "4",
                                        "--hr", "8", "--hidden", "64", "--seed", "1"};
  auto with_out = [&](const std::string& out) {
    auto a = fit;
    a.insert(a.end(), {"--out", out});
    return a;
  };
  const Run r1 = invoke(with_out(d / "a.ffld"));
  REQUIRE(r1.code == 0);
  CHECK(r1.err.find("epoch 300/300 (100%)") != std::string::npos);
  // one progress line per decile
  CHECK(std::count(r1.err.begin(), r1.err.end(), '\n') == 10);

  const std::string trace = read_text(d / "a.ffld.loss.csv");
  CHECK(trace.rfind("epoch,loss\n", 0) == 0);
  const std::string last = trace.substr(trace.rfind(',', trace.size() - 2) + 1);
  CHECK(std::stod(last) < 1e-3);
  CHECK(r1.json()["final_loss"].get<double>() == std::stod(last));

  REQUIRE(invoke(with_out(d / "b.ffld")).code == 0);
  CHECK(read_file(d / "a.ffld") == read_file(d / "b.ffld"));
  CHECK(read_text(d / "a.ffld.loss.csv") == read_text(d / "b.ffld.loss.csv"));

  nlohmann::json meta;
  const FeatureField f = decode_feature_field(read_file(d / "a.ffld"), &meta);
  CHECK(f.video_id() == "c");
  CHECK(meta["config"]["epochs"] == 300);
  CHECK(meta["volume"]["dim"] == 8);
}

TEST_CASE("cli: config files, flag overrides and exit codes") {
  TempDir d;
  write_text(d / "c.json", R"({"frames": 2, "height": 4, "width": 4, "dim": 4, "pattern": {"kind": "constant"}})");
  REQUIRE(invoke({"synth", "--spec", d / "c.json", "--out", d / "c.fvol"}).code == 0);
  write_text(d / "run.json", R"({"seed": 5, "field": {"epochs": 3, "hidden_dim": 16, "hr_size": 4}})");
  Run r = invoke({"fit-features", "--fvol", d / "c.fvol", "--out", d / "c.ffld", "--config", d / "run.json", "--epochs", "2"});
  REQUIRE(r.code == 0);
  CHECK(r.json()["config"]["epochs"] == 2);
  CHECK(r.json()["config"]["hidden_dim"] == 16);
  CHECK(r.json()["config"]["seed"] == 5);

  write_text(d / "typo.json", R"({"field": {"epoch": 3}})");
  r = invoke({"fit-features", "--fvol", d / "c.fvol", "--out", d / "x.ffld", "--config", d / "typo.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("field.epoch") != std::string::npos);

  r = invoke({"fit-features", "--fvol", d / "missing.fvol", "--out", d / "x.ffld"});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.fvol") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "x.ffld"));

  write_text(d / "junk.fvol", "FVOL\x01");
  r = invoke({"fit-features", "--fvol", d / "junk.fvol", "--out", d / "x.ffld"});
  CHECK(r.code == 2);
  CHECK(r.err.find("truncated") != std::string::npos);

  r = invoke({"fit-features", "--fvol", d / "c.fvol", "--out", d / "x.ffld", "--epochs", "5", "--hr", "4", "--lr", "1e300"});
  CHECK(r.code == 3);
  CHECK(r.err.find("not finite") != std::string::npos);

  r = invoke({"fit-features", "--fvol", d / "c.fvol", "--out", d / "x.ffld", "--activation", "tanh"});
  CHECK(r.code == 2);
}

TEST_CASE("cli: fit-flow identity pair, batch equivalence and thread settings") {
  TempDir d;
  small_field(d);
  Run r = invoke({"fit-flow", "--src", d / "v.ffld:0", "--tgt", d / "v.ffld:0", "--out", d / "id.dfld", "--epochs", "100",
               "--sample-grid", "16"});
  REQUIRE(r.code == 0);
  CHECK(r.json()["pairs"][0]["mean_abs_displacement"].get<double>() < 0.5);

  const std::vector<std::string> single = {"fit-flow", "--src", d / "v.ffld:0", "--tgt", d / "v.ffld:1", "--epochs",
                                           "30", "--sample-grid", "16"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = single;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  REQUIRE(invoke(with({"--out", d / "s01.dfld"})).code == 0);
  REQUIRE(invoke({"fit-flow", "--src", d / "v.ffld:1", "--tgt", d / "v.ffld:0", "--out", d / "s10.dfld", "--epochs", "30",
               "--sample-grid", "16"})
              .code == 0);

  // batch of one equals the single run
  write_text(d / "one.json", R"({"pairs": [{"src": "v.ffld:0", "tgt": "v.ffld:1", "out": "b01.dfld"}]})");
  r = invoke({"fit-flow", "--pairs", d / "one.json", "--epochs", "30", "--sample-grid", "16"});
  REQUIRE(r.code == 0);
  CHECK(read_file(d / "b01.dfld") == read_file(d / "s01.dfld"));

  // two pairs on two threads equal the sequential runs
  write_text(d / "two.json", R"([{"src": "v.ffld:1", "tgt": "v.ffld:0", "out": "t10.dfld"},
                                  {"src": "v.ffld:0", "tgt": "v.ffld:1", "out": "t01.dfld"}])");
  r = invoke({"fit-flow", "--pairs", d / "two.json", "--epochs", "30", "--sample-grid", "16", "--threads", "2"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("2 thread(s)") != std::string::npos);
  CHECK(read_file(d / "t10.dfld") == read_file(d / "s10.dfld"));
  CHECK(read_file(d / "t01.dfld") == read_file(d / "s01.dfld"));

  ::setenv("INRPROP_THREADS", "zero", 1);
  r = invoke({"fit-flow", "--pairs", d / "two.json", "--epochs", "1"});
  CHECK(r.code == 2);
  ::setenv("INRPROP_THREADS", "2", 1);
  r = invoke({"fit-flow", "--pairs", d / "two.json", "--epochs", "30", "--sample-grid", "16"});
  ::unsetenv("INRPROP_THREADS");
  CHECK(r.code == 0);
  CHECK(r.err.find("2 thread(s)") != std::string::npos);

  write_text(d / "bad.json", R"([{"src": "v.ffld:0", "tgt": "v.ffld:9", "out": "x.dfld"}])");
  CHECK(invoke({"fit-flow", "--pairs", d / "bad.json", "--epochs", "1"}).code == 2);
  CHECK(invoke({"fit-flow", "--src", d / "v.ffld:0"}).code == 2);
}

TEST_CASE("cli: fit-flow recovers a synthetic rigid shift") {
  TempDir d;
  write_text(d / "s.json", R"({"frames": 2, "height": 32, "width": 32, "dim": 16, "seed": 1,
                               "pattern": {"kind": "smooth_random"}, "warp": {"kind": "rigid_shift", "dx": 3, "dy": 0}})");
  REQUIRE(invoke({"synth", "--spec", d / "s.json", "--out", d / "s.fvol"}).code == 0);
  REQUIRE(invoke({"fit-features", "--fvol", d / "s.fvol", "--out", d / "s.ffld", "--epochs", "300", "--steps", "4", "--hr",
               "32", "--hidden", "128", "--seed", "3"})
              .code == 0);
  const Run r = invoke({"fit-flow", "--src", d / "s.ffld:0", "--tgt", d / "s.ffld:1", "--out", d / "s.dfld", "--epochs",
                     "500", "--sample-grid", "32", "--synth", d / "s.json"});
  REQUIRE(r.code == 0);
  const double epe = r.json()["pairs"][0]["epe"].get<double>();
  MESSAGE("shift(3,0) endpoint error " << epe);
  CHECK(epe < 0.5);
}

TEST_CASE("cli: propagate points and masks, then evaluate") {
  TempDir d;
  small_field(d);
  REQUIRE(invoke({"fit-flow", "--src", d / "v.ffld:0", "--tgt", d / "v.ffld:1", "--out", d / "d.dfld", "--epochs", "50",
               "--sample-grid", "16"})
              .code == 0);
  write_text(d / "ann.json", R"({"video_id": "v", "frame": 0, "canvas": {"width": 16, "height": 16},
      "points": [{"x": 3, "y": 4, "label": "a"}, {"x": 10.5, "y": 8}], "mask_ref": "m.pgm"})");
  atomic_write(d / "m.pgm", encode_pgm(disc_mask({16, 16}, 8, 8, 5)));

  Run r = invoke({"propagate", "--annotation", d / "ann.json", "--src-field", d / "v.ffld", "--tgt-field", d / "v.ffld",
               "--disp", d / "d.dfld", "--out", d / "p.json"});
  REQUIRE(r.code == 0);
  const PropagationDoc pts = read_propagation(d / "p.json");
  REQUIRE(pts.results.size() == 2);
  CHECK(pts.seed.has_value());
  CHECK(pts.target_frame == 1);
  CHECK(pts.configs.contains("match"));
  for (const auto& m : pts.results) {
    CHECK(m.cosine >= -1.0);
    CHECK(m.cosine <= 1.0);
  }
  CHECK(nlohmann::json::parse(read_text(d / "p.json"))["results"][1].contains("cosine"));

  // identical inputs give identical bytes
  REQUIRE(invoke({"propagate", "--annotation", d / "ann.json", "--src-field", d / "v.ffld", "--tgt-field", d / "v.ffld",
               "--disp", d / "d.dfld", "--out", d / "p2.json"})
              .code == 0);
  CHECK(read_file(d / "p.json") == read_file(d / "p2.json"));

  r = invoke({"propagate", "--annotation", d / "ann.json", "--src-field", d / "v.ffld", "--tgt-field", d / "v.ffld",
           "--disp", d / "d.dfld", "--mode", "mask", "--out", d / "pm.json", "--prob-out", d / "prob.pgm"});
  REQUIRE(r.code == 0);
  const PropagationDoc md = read_propagation(d / "pm.json");
  CHECK(md.mask_outputs["mask"] == "pm.mask.pgm");
  CHECK(md.mask_outputs["probability"] == "prob.pgm");
  CHECK(md.configs["kde"]["tau"] == 0.25);

  // the CLI mask equals the in-process pipeline on the same checkpoints
  auto field = std::make_shared<const FeatureField>(decode_feature_field(read_file(d / "v.ffld")));
  const DisplacementField disp = decode_displacement(read_file(d / "d.dfld"));
  const MaskPropagation lib = propagate_mask(disc_mask({16, 16}, 8, 8, 5), make_pair(field, 0, field, 1), disp,
                                             MatchConfig{}, InteriorConfig{}, KdeConfig{});
  const BinaryMask cli_mask = decode_pgm(read_file(d / "pm.mask.pgm"));
  CHECK(cli_mask == lib.mask);
  CHECK(md.mask_outputs["foreground"] == lib.mask.count());

  r = invoke({"eval", "--pred", d / "pm.json", "--gt", d / "m.pgm", "--metric", "dice"});
  REQUIRE(r.code == 0);
  CHECK(r.json()["metrics"][0]["value"].get<double>() == dice(lib.mask, disc_mask({16, 16}, 8, 8, 5)));

  // empty annotation and mismatched canvas are input errors
  write_text(d / "empty.json", R"({"video_id": "v", "frame": 0, "canvas": {"width": 16, "height": 16}, "points": []})");
  r = invoke({"propagate", "--annotation", d / "empty.json", "--src-field", d / "v.ffld", "--tgt-field", d / "v.ffld",
           "--disp", d / "d.dfld", "--out", d / "x.json"});
  CHECK(r.code == 2);
  write_text(d / "wide.json", R"({"video_id": "v", "frame": 0, "canvas": {"width": 32, "height": 16}, "points": [{"x": 1, "y": 1}]})");
  r = invoke({"propagate", "--annotation", d / "wide.json", "--src-field", d / "v.ffld", "--tgt-field", d / "v.ffld",
           "--disp", d / "d.dfld", "--out", d / "x.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("[annotation]") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "x.json"));
}

TEST_CASE("cli: eval metrics") {
  TempDir d;
  write_text(d / "gt.json", R"({"video_id": "v", "frame": 3, "canvas": {"width": 256, "height": 256},
      "points": [{"x": 10, "y": 10}, {"x": 100, "y": 50}, {"x": 200, "y": 200}]})");
  Run r = invoke({"eval", "--pred", d / "gt.json", "--gt", d / "gt.json", "--metric", "pck"});
  REQUIRE(r.code == 0);
  for (const auto& m : r.json()["metrics"]) CHECK(m["value"] == 1.0);

  // uniform 3 px error: within 4, 8, 16 but not 1, 2
  write_text(d / "pred.json", R"({"video_id": "v", "frame": 3, "canvas": {"width": 256, "height": 256},
      "points": [{"x": 13, "y": 10}, {"x": 100, "y": 53}, {"x": 197, "y": 200}]})");
  r = invoke({"eval", "--pred", d / "pred.json", "--gt", d / "gt.json", "--metric", "delta", "--format", "csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out == "metric,label,value,count\ndelta_avg,delta_avg,0.6,3\n");

  write_text(d / "short.json", R"({"video_id": "v", "frame": 3, "canvas": {"width": 256, "height": 256},
      "points": [{"x": 13, "y": 10}]})");
  r = invoke({"eval", "--pred", d / "short.json", "--gt", d / "gt.json", "--metric", "pck"});
  CHECK(r.code == 2);

  BinaryMask a(8, 8), b(8, 8);
  a.set(1, 1);
  b.set(6, 6);
  atomic_write(d / "a.pgm", encode_pgm(a));
  atomic_write(d / "b.pgm", encode_pgm(b));
  atomic_write(d / "c.pgm", encode_pgm(BinaryMask(9, 8)));
  r = invoke({"eval", "--pred", d / "a.pgm", "--gt", d / "b.pgm", "--metric", "dice", "--out", d / "dice.json"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(read_text(d / "dice.json"))["metrics"][0]["value"] == 0.0);
  CHECK(invoke({"eval", "--pred", d / "a.pgm", "--gt", d / "c.pgm", "--metric", "dice"}).code == 2);
  CHECK(invoke({"eval", "--pred", d / "a.pgm", "--gt", d / "b.pgm", "--metric", "iou"}).code == 2);
}

TEST_CASE("cli: compare-arch writes one row per activation") {
  TempDir d;
  write_text(d / "s.json", R"({"frames": 2, "height": 8, "width": 8, "dim": 4, "pattern": {"kind": "stripes"}})");
  REQUIRE(invoke({"synth", "--spec", d / "s.json", "--out", d / "s.fvol"}).code == 0);
  const Run r = invoke({"compare-arch", "--fvol", d / "s.fvol", "--out", d / "a.csv", "--epochs", "5", "--hidden", "16",
                     "--hr", "8"});
  REQUIRE(r.code == 0);
  const std::string csv = read_text(d / "a.csv");
  CHECK(csv.rfind("activation,final_loss,rmse,param_count\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("\nsine,") != std::string::npos);
  CHECK(csv.find("\nrelu,") != std::string::npos);
  CHECK(csv.find("\nrelu_pe(L=3),") != std::string::npos);
}
