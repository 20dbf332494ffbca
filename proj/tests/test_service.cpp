#include <doctest.h>

#include <chrono>
#include <thread>

#include "inrprop/io.hpp"
#include "inrprop/maskops.hpp"
#include "inrprop/service.hpp"
#include "inrprop/synth.hpp"

// after the engine headers: resolv.h defines a `_res` macro that Eigen trips on
#include <httplib.h>

using namespace inrprop;
using json = nlohmann::json;

namespace {

struct Response {
  int status = 0;
  std::string body;
  std::string content_type;
  json js() const { return json::parse(body); }
};

class Harness {
 public:
  explicit Harness(int workers = 1) : service_({"127.0.0.1", 0, workers}) {
    service_.start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", service_.port());
    client_->set_read_timeout(120, 0);
  }

  Response get(const std::string& path) { return wrap(client_->Get(path)); }
  Response post(const std::string& path, const std::string& body, const std::string& type = "application/json") {
    return wrap(client_->Post(path, body, type));
  }
  Response post(const std::string& path, const json& body) { return post(path, body.dump()); }
  Response post_bytes(const std::string& path, const Bytes& b, const std::string& type) {
    return post(path, std::string(b.begin(), b.end()), type);
  }

  // Polls a job until it leaves queued/running, recording every observed state.
  json wait(const std::string& job, std::vector<json>* history = nullptr) {
    for (int i = 0; i < 6000; ++i) {
      const json j = get("/jobs/" + job).js();
      if (history) history->push_back(j);
      if (j["state"] == "done" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    FAIL("job " << job << " did not finish");
    return {};
  }

  Service& service() { return service_; }

 private:
  static Response wrap(const httplib::Result& r) {
    REQUIRE(r);
    return {r->status, r->body, r->get_header_value("Content-Type")};
  }

  Service service_;
  std::unique_ptr<httplib::Client> client_;
};

Bytes small_volume(const char* warp = R"({"kind": "rigid_shift", "dx": 2, "dy": 0})") {
  SynthSpec s = json::parse(std::string(R"({"frames": 2, "height": 16, "width": 16, "dim": 8, "seed": 1,
      "pattern": {"kind": "smooth_random"}, "warp": )") + warp + "}")
                    .get<SynthSpec>();
  return encode_fvol(make_volume(s).volume);
}

const json kFit = {{"epochs", 100}, {"steps_per_epoch", 2}, {"hr_size", 16}, {"hidden_dim", 64}, {"seed", 1}};
const json kFlow = {{"epochs", 60}, {"sample_grid", 16}};

// Uploads, fits and links a flow v:0 -> v:1; returns {video, flow}.
std::pair<std::string, std::string> fitted_pair(Harness& h) {
  const Response up = h.post_bytes("/videos", small_volume(), "application/octet-stream");
  REQUIRE(up.status == 201);
  const std::string vid = up.js()["id"];
  const Response fit = h.post("/videos/" + vid + "/fit", kFit);
  REQUIRE(fit.status == 202);
  REQUIRE(h.wait(fit.js()["job"])["state"] == "done");
  const Response flow = h.post("/flows", json{{"src", vid + ":0"}, {"tgt", vid + ":1"}, {"cfg", kFlow}});
  REQUIRE(flow.status == 202);
  REQUIRE(h.wait(flow.js()["job"])["state"] == "done");
  return {vid, flow.js()["flow"]};
}

json annotation(const std::string& vid, json extra = json::object()) {
  json a = {{"video_id", vid}, {"frame", 0}, {"canvas", {{"width", 16}, {"height", 16}}}};
  a.update(extra);
  return a;
}

int job_rank(const json& j) {
  const std::string s = j["state"];
  return s == "queued" ? 0 : s == "running" ? 1 : 2;
}

}  // namespace

TEST_CASE("service: upload, fit, flow and point propagation") {
  Harness h;
  const Response up = h.post_bytes("/videos", small_volume(), "application/octet-stream");
  REQUIRE(up.status == 201);
  const json v = up.js();
  CHECK(v["id"] == "v1");
  CHECK(v["frames"] == 2);
  CHECK(v["dim"] == 8);
  CHECK(v["renormalized"] == 0);
  CHECK(h.get("/videos/v1").js()["fitted"] == false);

  // flows need fitted fields
  Response r = h.post("/flows", json{{"src", "v1:0"}, {"tgt", "v1:1"}});
  CHECK(r.status == 409);
  CHECK(r.js()["stage"] == "lookup");

  r = h.post("/videos/v1/fit", kFit);
  REQUIRE(r.status == 202);
  std::vector<json> history;
  const json done = h.wait(r.js()["job"], &history);
  CHECK(done["state"] == "done");
  CHECK(done["progress"] == 1.0);
  CHECK(done["result_ref"] == "videos/v1");
  CHECK(done["error"].is_null());
  for (std::size_t i = 1; i < history.size(); ++i) {
    CHECK(job_rank(history[i]) >= job_rank(history[i - 1]));
    CHECK(history[i]["progress"].get<double>() >= history[i - 1]["progress"].get<double>());
  }
  const json fitted = h.get("/videos/v1").js();
  CHECK(fitted["fitted"] == true);
  CHECK(fitted["canvas"] == json{{"width", 16}, {"height", 16}});

  r = h.post("/flows", json{{"src", "v1:0"}, {"tgt", "v1:1"}, {"cfg", kFlow}});
  REQUIRE(r.status == 202);
  const std::string flow = r.js()["flow"];

  // propagation before the flow job finishes is either a conflict or a result, never a crash
  const json pts = {{"annotation", annotation("v1", {{"points", {{{"x", 4}, {"y", 5}}, {{"x", 11}, {"y", 9}}}}})},
                    {"flow", flow}};
  const Response early = h.post("/propagate/points", pts);
  CHECK((early.status == 200 || early.status == 409));

  REQUIRE(h.wait(r.js()["job"])["state"] == "done");
  const json f = h.get("/flows/" + flow).js();
  CHECK(f["fitted"] == true);
  CHECK(f["src"] == "v1:0");
  CHECK(f["config"]["epochs"] == 60);
  CHECK(std::isfinite(f["final_loss"].get<double>()));

  r = h.post("/propagate/points", pts);
  REQUIRE(r.status == 200);
  const PropagationDoc doc = parse_propagation(r.js());
  CHECK(doc.mode == "points");
  CHECK(doc.target_video == "v1");
  CHECK(doc.target_frame == 1);
  REQUIRE(doc.results.size() == 2);
  for (const auto& m : doc.results) {
    CHECK(m.predicted.x >= 0.0);
    CHECK(m.predicted.x < 16.0);
    CHECK(std::abs(m.cosine) <= 1.0);
  }
  // same request, same document
  CHECK(h.post("/propagate/points", pts).body == r.body);
}

TEST_CASE("service: errors carry status and stage") {
  Harness h;
  Response r = h.get("/jobs/j42");
  CHECK(r.status == 404);
  CHECK(r.js()["stage"] == "lookup");
  CHECK(h.get("/videos/v9").status == 404);
  CHECK(h.get("/flows/f1").status == 404);
  CHECK(h.get("/masks/m1").status == 404);
  CHECK(h.get("/probabilities/p1").status == 404);
  r = h.get("/no/such/route");
  CHECK(r.status == 404);
  CHECK(r.js().contains("error"));

  r = h.post("/videos", "FVOL\x01", "application/octet-stream");
  CHECK(r.status == 422);
  CHECK(r.js()["stage"] == "load");
  CHECK(r.js()["error"].get<std::string>().find("truncated") != std::string::npos);

  REQUIRE(h.post_bytes("/videos", small_volume(), "application/octet-stream").status == 201);
  r = h.post("/videos/v1/fit", json{{"epoch", 3}});
  CHECK(r.status == 422);
  CHECK(r.js()["error"].get<std::string>().find("epoch") != std::string::npos);
  CHECK(h.post("/videos/v1/fit", std::string("{not json")).status == 422);
  CHECK(h.post("/videos/v1/fit", json{{"lr", -1.0}}).status == 422);
  CHECK(h.post("/videos/v9/fit", kFit).status == 404);

  r = h.post("/flows", json{{"src", "v1"}, {"tgt", "v1:1"}});
  CHECK(r.status == 422);
  CHECK(h.post("/rethreshold", json{{"probability", "p1"}, {"tau", 0.5}}).status == 404);
  CHECK(h.post("/rethreshold", json{{"probability", "p1"}, {"tau", "high"}}).status == 422);

  // a diverging fit fails the job with its stage
  r = h.post("/videos/v1/fit", json{{"epochs", 3}, {"hr_size", 16}, {"lr", 1e300}});
  REQUIRE(r.status == 202);
  const json failed = h.wait(r.js()["job"]);
  CHECK(failed["state"] == "failed");
  CHECK(failed["stage"] == "fit_features");
  CHECK(failed["error"].get<std::string>().find("not finite") != std::string::npos);
  CHECK(h.get("/videos/v1").js()["fitted"] == false);
}

TEST_CASE("service: annotation schema errors and frame mismatch") {
  Harness h;
  const auto [vid, flow] = fitted_pair(h);
  Response r = h.post("/propagate/points", json{{"annotation", annotation(vid, {{"points", json::array()}})}, {"flow", flow}});
  CHECK(r.status == 422);
  r = h.post("/propagate/points",
             json{{"annotation", annotation(vid, {{"points", {{{"x", 4}}}}})}, {"flow", flow}});
  CHECK(r.status == 422);
  CHECK(r.js()["error"].get<std::string>().find("annotation.points[0].y") != std::string::npos);

  json wrong_frame = annotation(vid, {{"points", {{{"x", 4}, {"y", 4}}}}});
  wrong_frame["frame"] = 1;
  r = h.post("/propagate/points", json{{"annotation", wrong_frame}, {"flow", flow}});
  CHECK(r.status == 422);
  CHECK(r.js()["stage"] == "annotation");

  json wide = annotation(vid, {{"points", {{{"x", 4}, {"y", 4}}}}});
  wide["canvas"]["width"] = 32;
  CHECK(h.post("/propagate/points", json{{"annotation", wide}, {"flow", flow}}).status == 422);
  CHECK(h.post("/propagate/points", json{{"annotation", annotation(vid, {{"points", {{{"x", 4}, {"y", 4}}}}})},
                                         {"flow", "f99"}})
            .status == 404);
  CHECK(h.post("/propagate/mask", json{{"annotation", annotation(vid, {{"mask_ref", "m9"}})}, {"flow", flow}}).status ==
        404);
}

TEST_CASE("service: mask propagation, caching and re-thresholding") {
  Harness h;
  const auto [vid, flow] = fitted_pair(h);
  Response r = h.post_bytes("/masks", encode_pgm(disc_mask({16, 16}, 8, 8, 4)), "image/x-portable-graymap");
  REQUIRE(r.status == 201);
  const std::string mid = r.js()["id"];
  CHECK(r.js()["foreground"] == disc_mask({16, 16}, 8, 8, 4).count());
  r = h.get("/masks/" + mid);
  CHECK(r.content_type == "image/x-portable-graymap");
  CHECK(decode_pgm(Bytes(r.body.begin(), r.body.end())) == disc_mask({16, 16}, 8, 8, 4));
  CHECK(h.post("/masks", "P5\n4 4\n255\n", "image/x-portable-graymap").status == 422);

  const json req = {{"annotation", annotation(vid, {{"mask_ref", mid}})}, {"flow", flow}, {"kde", {{"tau", 0.25}}}};
  r = h.post("/propagate/mask", req);
  REQUIRE(r.status == 200);
  const json first = r.js();
  CHECK(first["cached"] == false);
  const std::string pid = first["probability"];
  const PropagationDoc doc = parse_propagation(first["document"]);
  CHECK(doc.mode == "mask");
  CHECK(doc.mask_outputs["probability"] == "probabilities/" + pid);
  CHECK(doc.mask_outputs["mask"] == "masks/" + first["mask"].get<std::string>());
  CHECK(doc.configs.contains("interior"));
  CHECK(doc.configs["kde"]["tau"] == 0.25);

  // changing only tau reuses the probability field
  json again = req;
  again["kde"]["tau"] = 0.5;
  r = h.post("/propagate/mask", again);
  REQUIRE(r.status == 200);
  CHECK(r.js()["cached"] == true);
  CHECK(r.js()["probability"] == pid);
  CHECK(r.js()["document"]["configs"]["kde"]["tau"] == 0.5);
  CHECK(r.js()["document"]["mask_outputs"]["foreground"].get<std::size_t>() <=
        first["document"]["mask_outputs"]["foreground"].get<std::size_t>());
  // changing sigma does not
  json other = req;
  other["kde"]["sigma"] = 3.0;
  r = h.post("/propagate/mask", other);
  CHECK(r.js()["cached"] == false);
  CHECK(r.js()["probability"] != pid);

  r = h.get("/probabilities/" + pid);
  REQUIRE(r.status == 200);
  const ProbabilityField prob = decode_probability_pgm(Bytes(r.body.begin(), r.body.end()));
  CHECK(prob.canvas() == Canvas{16, 16});

  // nested masks as tau rises
  BinaryMask previous;
  std::size_t previous_fg = 0;
  for (double tau : {0.05, 0.25, 0.5, 0.75, 0.95, 1.0}) {
    r = h.post("/rethreshold", json{{"probability", pid}, {"tau", tau}});
    REQUIRE(r.status == 200);
    const std::size_t fg = r.js()["foreground"];
    const Response m = h.get("/masks/" + r.js()["mask"].get<std::string>());
    const BinaryMask mask = decode_pgm(Bytes(m.body.begin(), m.body.end()));
    CHECK(mask.count() == fg);
    if (!previous.bits.empty()) {
      CHECK(fg <= previous_fg);
      for (std::size_t i = 0; i < mask.bits.size(); ++i)
        if (mask.bits[i]) CHECK(previous.bits[i]);
    }
    // tau = 1 keeps only the peak of the normalised field
    if (tau == 1.0) {
      CHECK(fg >= 1);
      for (std::size_t i = 0; i < mask.bits.size(); ++i)
        if (mask.bits[i]) CHECK(prob.values[i] == 1.0);
    }
    previous = mask;
    previous_fg = fg;
  }
  CHECK(h.post("/rethreshold", json{{"probability", pid}, {"tau", 0.0}}).status == 422);
  CHECK(h.post("/rethreshold", json{{"probability", pid}, {"tau", 1.5}}).status == 422);
}

TEST_CASE("service: fits of one video serialize; stop fails queued jobs") {
  Harness h(2);
  REQUIRE(h.post_bytes("/videos", small_volume(), "application/octet-stream").status == 201);
  const json slow = {{"epochs", 400}, {"steps_per_epoch", 2}, {"hr_size", 16}, {"hidden_dim", 64}};
  const std::string a = h.post("/videos/v1/fit", slow).js()["job"];
  const std::string b = h.post("/videos/v1/fit", slow).js()["job"];
  // the second fit of v1 waits even though a worker is free
  for (int i = 0; i < 50; ++i) {
    const json ja = h.get("/jobs/" + a).js(), jb = h.get("/jobs/" + b).js();
    if (ja["state"] == "running") CHECK(jb["state"] == "queued");
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  h.service().stop();
  h.service().stop();
}
