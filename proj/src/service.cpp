#include "inrprop/service.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "inrprop/config.hpp"
#include "inrprop/error.hpp"
#include "inrprop/io.hpp"
#include "inrprop/pipeline.hpp"
#include "inrprop/rng.hpp"

// After the engine headers: resolv.h (pulled in here) defines a `_res` macro
// that collides with Eigen internals.
#include <httplib.h>

namespace inrprop {

std::string to_string(JobKind k) { return k == JobKind::fit_features ? "fit_features" : "fit_flow"; }

std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

nlohmann::json to_json(const JobRecord& r) {
  nlohmann::json j = {{"id", r.id},
                      {"kind", to_string(r.kind)},
                      {"state", to_string(r.state)},
                      {"progress", r.progress},
                      {"result_ref", r.result_ref}};
  j["error"] = r.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.error);
  j["stage"] = r.stage.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.stage);
  return j;
}

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kPgm = "image/x-portable-graymap";

struct HttpError : Error {
  HttpError(int status, std::string stage, const std::string& what)
      : Error(what), status(status), stage(std::move(stage)) {}
  int status;
  std::string stage;
};

[[noreturn]] void not_found(const std::string& what) { throw HttpError(404, "lookup", what); }
[[noreturn]] void conflict(const std::string& what) { throw HttpError(409, "lookup", what); }

struct Cancelled : Error {
  Cancelled() : Error("service stopped") {}
};

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return parse_json_text(req.body, "request body");
  } catch (const FormatError& e) {
    throw HttpError(422, "request", e.what());
  }
}

Bytes body_bytes(const httplib::Request& req) { return Bytes(req.body.begin(), req.body.end()); }

const nlohmann::json& member(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(key, "missing");
  return j.at(key);
}

std::string string_member(const nlohmann::json& j, const char* key) {
  const auto& v = member(j, key);
  if (!v.is_string()) throw SchemaError(key, "must be a string");
  return v.get<std::string>();
}

nlohmann::json optional_object(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return nlohmann::json::object();
  return j.at(key);
}

}  // namespace

struct Service::Impl {
  struct Video {
    std::shared_ptr<const FeatureVolume> volume;
    std::shared_ptr<const FeatureField> field;
  };
  struct Flow {
    std::string job;
    PairSpec pair;
    FlowFitConfig cfg;
    std::shared_ptr<const DisplacementField> field;
  };
  struct Pending {
    std::string job_id;
    std::string lock;  ///< jobs sharing a non-empty lock never overlap
    std::function<void(const std::string&)> work;
  };
  struct CachedPropagation {
    std::string probability;
    PropagationDoc doc;
  };

  ServiceOptions opts;
  httplib::Server server;
  int bound_port = -1;
  std::thread listener;

  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::vector<std::thread> workers;
  std::deque<Pending> queue;
  std::set<std::string> busy_locks;

  std::map<std::string, Video> videos;
  std::map<std::string, JobRecord> jobs;
  std::map<std::string, Flow> flows;
  std::map<std::string, std::shared_ptr<const BinaryMask>> masks;
  std::map<std::string, std::shared_ptr<const ProbabilityField>> probabilities;
  std::map<std::string, CachedPropagation> propagation_cache;
  std::map<char, std::uint64_t> counters;

  explicit Impl(ServiceOptions o) : opts(std::move(o)) {
    if (opts.workers < 1) throw ConfigError("service: workers must be >= 1");
    routes();
    for (int i = 0; i < opts.workers; ++i) workers.emplace_back([this] { worker_loop(); });
  }

  // Caller holds `mu`.
  std::string next_id(char prefix) { return std::string(1, prefix) + std::to_string(++counters[prefix]); }

  // --- jobs ------------------------------------------------------------------

  std::string enqueue(JobKind kind, std::string lock, std::string result_ref,
                      std::function<void(const std::string&)> work) {
    std::lock_guard lk(mu);
    const std::string id = next_id('j');
    JobRecord r;
    r.id = id;
    r.kind = kind;
    r.result_ref = std::move(result_ref);
    jobs[id] = r;
    queue.push_back({id, std::move(lock), std::move(work)});
    cv.notify_all();
    return id;
  }

  void worker_loop() {
    for (;;) {
      Pending job;
      {
        std::unique_lock lk(mu);
        std::deque<Pending>::iterator it;
        cv.wait(lk, [&] {
          if (stopping) return true;
          it = std::find_if(queue.begin(), queue.end(),
                            [&](const Pending& p) { return p.lock.empty() || !busy_locks.count(p.lock); });
          return it != queue.end();
        });
        if (stopping) return;
        job = std::move(*it);
        queue.erase(it);
        if (!job.lock.empty()) busy_locks.insert(job.lock);
        jobs[job.job_id].state = JobState::running;
      }
      std::string error, stage;
      try {
        job.work(job.job_id);
      } catch (const std::exception& e) {
        error = e.what();
        const auto* se = dynamic_cast<const StageError*>(&e);
        stage = se ? se->stage() : "internal";
      }
      {
        std::lock_guard lk(mu);
        JobRecord& r = jobs[job.job_id];
        if (error.empty()) {
          r.state = JobState::done;
          r.progress = 1.0;
        } else {
          r.state = JobState::failed;
          r.error = error;
          r.stage = stage;
        }
        if (!job.lock.empty()) busy_locks.erase(job.lock);
      }
      cv.notify_all();
    }
  }

  EpochCallback progress_callback(const std::string& job_id) {
    return [this, job_id](int epoch, int epochs, double) {
      std::lock_guard lk(mu);
      if (stopping) throw Cancelled();
      JobRecord& r = jobs[job_id];
      r.progress = std::max(r.progress, static_cast<double>(epoch + 1) / epochs);
    };
  }

  // --- lookups (caller holds `mu`) -------------------------------------------

  Video& video(const std::string& id) {
    auto it = videos.find(id);
    if (it == videos.end()) not_found("unknown video '" + id + "'");
    return it->second;
  }

  const Flow& done_flow(const std::string& id) {
    auto it = flows.find(id);
    if (it == flows.end()) not_found("unknown flow '" + id + "'");
    if (!it->second.field) conflict("flow '" + id + "' is not fitted yet (job " + it->second.job + ")");
    return it->second;
  }

  std::shared_ptr<const BinaryMask> mask(const std::string& id) {
    auto it = masks.find(id);
    if (it == masks.end()) not_found("unknown mask '" + id + "'");
    return it->second;
  }

  std::shared_ptr<const ProbabilityField> probability(const std::string& id) {
    auto it = probabilities.find(id);
    if (it == probabilities.end()) not_found("unknown probability field '" + id + "'");
    return it->second;
  }

  std::string store_mask(BinaryMask m) {
    const std::string id = next_id('m');
    masks[id] = std::make_shared<const BinaryMask>(std::move(m));
    return id;
  }

  // --- handlers ----------------------------------------------------------------

  nlohmann::json post_video(const httplib::Request& req) {
    FvolLoad load;
    try {
      load = decode_fvol(body_bytes(req));
    } catch (const FormatError& e) {
      throw StageError("load", e.what(), ErrorClass::input);
    }
    auto volume = std::make_shared<const FeatureVolume>(std::move(load.volume));
    std::lock_guard lk(mu);
    const std::string id = next_id('v');
    videos[id] = Video{volume, nullptr};
    return {{"id", id},
            {"frames", volume->frames},
            {"height", volume->height},
            {"width", volume->width},
            {"dim", volume->dim},
            {"renormalized", load.renormalized}};
  }

  nlohmann::json get_video(const std::string& id) {
    std::lock_guard lk(mu);
    const Video& v = video(id);
    nlohmann::json j = {{"id", id},
                        {"frames", v.volume->frames},
                        {"height", v.volume->height},
                        {"width", v.volume->width},
                        {"dim", v.volume->dim},
                        {"fitted", v.field != nullptr}};
    if (v.field) j["canvas"] = {{"width", v.field->canvas().width}, {"height", v.field->canvas().height}};
    return j;
  }

  nlohmann::json post_fit(const std::string& id, const httplib::Request& req) {
    const nlohmann::json body = req.body.empty() ? nlohmann::json::object() : parse_body(req);
    const FieldFitConfig cfg = field_config_from_json(body);
    cfg.validate();
    std::shared_ptr<const FeatureVolume> volume;
    {
      std::lock_guard lk(mu);
      volume = video(id).volume;
    }
    const std::string job = enqueue(JobKind::fit_features, "video:" + id, "videos/" + id,
                                    [this, id, cfg, volume](const std::string& job_id) {
                                      std::optional<FieldFit> fit;
                                      try {
                                        fit = fit_feature_field(*volume, cfg, progress_callback(job_id));
                                      } catch (const std::exception& e) {
                                        rethrow_in_stage("fit_features", e);
                                      }
                                      fit->field.set_video_id(id);
                                      std::lock_guard lk(mu);
                                      videos[id].field = std::make_shared<const FeatureField>(std::move(fit->field));
                                    });
    return {{"job", job}};
  }

  nlohmann::json get_job(const std::string& id) {
    std::lock_guard lk(mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) not_found("unknown job '" + id + "'");
    return to_json(it->second);
  }

  nlohmann::json post_flow(const httplib::Request& req) {
    const nlohmann::json body = parse_body(req);
    const FrameRef src = parse_frame_ref(string_member(body, "src"));
    const FrameRef tgt = parse_frame_ref(string_member(body, "tgt"));
    if (!src.frame) throw SchemaError("src", "must be video:frame");
    if (!tgt.frame) throw SchemaError("tgt", "must be video:frame");
    const FlowFitConfig cfg = flow_config_from_json(optional_object(body, "cfg"), {}, "cfg");
    cfg.validate();
    PairSpec pair;
    std::string flow_id;
    {
      std::lock_guard lk(mu);
      const Video& sv = video(src.name);
      const Video& tv = video(tgt.name);
      if (!sv.field) conflict("video '" + src.name + "' has no fitted field");
      if (!tv.field) conflict("video '" + tgt.name + "' has no fitted field");
      pair = make_pair(sv.field, *src.frame, tv.field, *tgt.frame);
      try {
        pair.validate();
      } catch (const std::exception& e) {
        rethrow_in_stage("fit_flow", e);
      }
      flow_id = next_id('f');
      flows[flow_id] = Flow{"", pair, cfg, nullptr};
    }
    const std::string job =
        enqueue(JobKind::fit_flow, "", "flows/" + flow_id, [this, flow_id, pair, cfg](const std::string& job_id) {
          std::shared_ptr<const DisplacementField> d;
          try {
            d = std::make_shared<const DisplacementField>(fit_displacement(pair, cfg, progress_callback(job_id)));
          } catch (const std::exception& e) {
            rethrow_in_stage("fit_flow", e);
          }
          std::lock_guard lk(mu);
          flows[flow_id].field = std::move(d);
        });
    std::lock_guard lk(mu);
    flows[flow_id].job = job;
    return {{"job", job}, {"flow", flow_id}};
  }

  nlohmann::json get_flow(const std::string& id) {
    std::lock_guard lk(mu);
    auto it = flows.find(id);
    if (it == flows.end()) not_found("unknown flow '" + id + "'");
    const Flow& f = it->second;
    nlohmann::json j = {{"id", id},
                        {"job", f.job},
                        {"src", f.pair.src_id + ":" + std::to_string(f.pair.src_t)},
                        {"tgt", f.pair.tgt_id + ":" + std::to_string(f.pair.tgt_t)},
                        {"fitted", f.field != nullptr},
                        {"config", to_json(f.cfg)}};
    if (f.field) {
      j["final_loss"] = f.field->loss_trace().back();
      j["mean_abs_displacement"] = mean_displacement_magnitude(*f.field, f.field->canvas(), 32);
    }
    return j;
  }

  RunConfig propagation_config(const nlohmann::json& body, const Flow& flow) {
    RunConfig rc;
    rc.flow = flow.cfg;
    rc.seed = flow.cfg.seed;
    rc.match = match_config_from_json(optional_object(body, "match"), {}, "match");
    rc.interior = interior_config_from_json(optional_object(body, "interior"), {}, "interior");
    rc.kde = kde_config_from_json(optional_object(body, "kde"), {}, "kde");
    rc.match.validate();
    rc.interior.validate();
    rc.kde.validate();
    return rc;
  }

  nlohmann::json post_propagate_points(const httplib::Request& req) {
    const nlohmann::json body = parse_body(req);
    AnnotationDoc ann;
    try {
      ann = parse_annotation(member(body, "annotation"));
    } catch (const SchemaError& e) {
      throw SchemaError(e.path().empty() ? "annotation" : "annotation." + e.path(), e.what());
    }
    Flow flow;
    {
      std::lock_guard lk(mu);
      flow = done_flow(string_member(body, "flow"));
    }
    const RunConfig rc = propagation_config(body, flow);
    PropagationRun run = propagate_annotation(ann, std::nullopt, flow.pair, *flow.field, rc, "points");
    return to_json(run.doc);
  }

  nlohmann::json post_propagate_mask(const httplib::Request& req) {
    const nlohmann::json body = parse_body(req);
    const nlohmann::json& ann_json = member(body, "annotation");
    AnnotationDoc ann;
    try {
      ann = parse_annotation(ann_json);
    } catch (const SchemaError& e) {
      throw SchemaError(e.path().empty() ? "annotation" : "annotation." + e.path(), e.what());
    }
    if (!ann.mask_ref) throw SchemaError("annotation.mask_ref", "mask propagation needs a mask id");
    const std::string flow_id = string_member(body, "flow");
    Flow flow;
    std::shared_ptr<const BinaryMask> src_mask;
    {
      std::lock_guard lk(mu);
      flow = done_flow(flow_id);
      src_mask = mask(*ann.mask_ref);
    }
    const RunConfig rc = propagation_config(body, flow);
    const std::string key = std::to_string(fnv1a64(dump_json(to_json(ann)))) + "|" + flow_id + "|" +
                            to_json(rc.interior).dump() + "|" + nlohmann::json(rc.kde.sigma).dump() + "|" +
                            to_json(rc.match).dump();

    std::optional<CachedPropagation> hit;
    {
      std::lock_guard lk(mu);
      auto it = propagation_cache.find(key);
      if (it != propagation_cache.end()) hit = it->second;
    }
    const bool cached = hit.has_value();
    if (!hit) {
      PropagationRun run = propagate_annotation(ann, *src_mask, flow.pair, *flow.field, rc, "mask");
      std::lock_guard lk(mu);
      auto it = propagation_cache.find(key);
      if (it == propagation_cache.end()) {
        const std::string pid = next_id('p');
        probabilities[pid] = std::make_shared<const ProbabilityField>(std::move(run.mask->field));
        run.doc.mask_outputs["probability"] = "probabilities/" + pid;
        it = propagation_cache.emplace(key, CachedPropagation{pid, std::move(run.doc)}).first;
      }
      hit = it->second;
    }

    std::shared_ptr<const ProbabilityField> field;
    {
      std::lock_guard lk(mu);
      field = probability(hit->probability);
    }
    BinaryMask out = threshold(*field, rc.kde.tau);
    PropagationDoc doc = hit->doc;
    doc.configs["kde"] = to_json(rc.kde);
    doc.mask_outputs["foreground"] = out.count();
    std::lock_guard lk(mu);
    const std::string mid = store_mask(std::move(out));
    doc.mask_outputs["mask"] = "masks/" + mid;
    return {{"probability", hit->probability}, {"mask", mid}, {"cached", cached}, {"document", to_json(doc)}};
  }

  nlohmann::json post_rethreshold(const httplib::Request& req) {
    const nlohmann::json body = parse_body(req);
    const std::string pid = string_member(body, "probability");
    const auto& t = member(body, "tau");
    if (!t.is_number()) throw SchemaError("tau", "must be a number");
    KdeConfig k;
    k.tau = t.get<double>();
    k.validate();
    std::shared_ptr<const ProbabilityField> field;
    {
      std::lock_guard lk(mu);
      field = probability(pid);
    }
    BinaryMask m = threshold(*field, k.tau);
    const std::size_t fg = m.count();
    std::lock_guard lk(mu);
    return {{"mask", store_mask(std::move(m))}, {"foreground", fg}, {"tau", k.tau}};
  }

  nlohmann::json post_mask(const httplib::Request& req) {
    BinaryMask m;
    try {
      m = decode_pgm(body_bytes(req));
    } catch (const FormatError& e) {
      throw StageError("load", e.what(), ErrorClass::input);
    }
    const int w = m.width, h = m.height;
    const std::size_t fg = m.count();
    std::lock_guard lk(mu);
    return {{"id", store_mask(std::move(m))}, {"width", w}, {"height", h}, {"foreground", fg}};
  }

  // --- wiring ------------------------------------------------------------------

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send_error(httplib::Response& res, int status, const std::string& stage, const std::string& what) {
    res.status = status;
    res.set_content(dump_json({{"error", what}, {"stage", stage}, {"status", status}}), kJson);
  }

  static Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.stage, e.what());
      } catch (const std::exception& e) {
        const auto* se = dynamic_cast<const StageError*>(&e);
        const ErrorClass cls = classify(e);
        const std::string stage = se ? se->stage() : (cls == ErrorClass::input ? "request" : "internal");
        send_error(res, cls == ErrorClass::input ? 422 : 500, stage, e.what());
      }
    };
  }

  static Handler json_route(std::function<nlohmann::json(const httplib::Request&)> fn, int status = 200) {
    return guarded([fn = std::move(fn), status](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json j = fn(req);
      res.status = status;
      res.set_content(dump_json(j), kJson);
    });
  }

  void routes() {
    server.Post("/videos", json_route([this](const auto& req) { return post_video(req); }, 201));
    server.Get(R"(/videos/([^/]+))", json_route([this](const auto& req) { return get_video(req.matches[1]); }));
    server.Post(R"(/videos/([^/]+)/fit)",
                json_route([this](const auto& req) { return post_fit(req.matches[1], req); }, 202));
    server.Get(R"(/jobs/([^/]+))", json_route([this](const auto& req) { return get_job(req.matches[1]); }));
    server.Post("/flows", json_route([this](const auto& req) { return post_flow(req); }, 202));
    server.Get(R"(/flows/([^/]+))", json_route([this](const auto& req) { return get_flow(req.matches[1]); }));
    server.Post("/propagate/points", json_route([this](const auto& req) { return post_propagate_points(req); }));
    server.Post("/propagate/mask", json_route([this](const auto& req) { return post_propagate_mask(req); }));
    server.Post("/rethreshold", json_route([this](const auto& req) { return post_rethreshold(req); }));
    server.Post("/masks", json_route([this](const auto& req) { return post_mask(req); }, 201));
    server.Get(R"(/masks/([^/]+))", guarded([this](const auto& req, auto& res) {
                 std::shared_ptr<const BinaryMask> m;
                 {
                   std::lock_guard lk(mu);
                   m = mask(req.matches[1]);
                 }
                 const Bytes b = encode_pgm(*m);
                 res.set_content(std::string(b.begin(), b.end()), kPgm);
               }));
    server.Get(R"(/probabilities/([^/]+))", guarded([this](const auto& req, auto& res) {
                 std::shared_ptr<const ProbabilityField> p;
                 {
                   std::lock_guard lk(mu);
                   p = probability(req.matches[1]);
                 }
                 const Bytes b = encode_probability_pgm(*p);
                 res.set_content(std::string(b.begin(), b.end()), kPgm);
               }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 404 && res.body.empty()) send_error(res, 404, "route", "no such endpoint");
    });
  }

  void shutdown() {
    {
      std::lock_guard lk(mu);
      if (stopping) return;
      stopping = true;
      for (const Pending& p : queue) {
        JobRecord& r = jobs[p.job_id];
        r.state = JobState::failed;
        r.error = "service stopped";
        r.stage = "shutdown";
      }
      queue.clear();
    }
    cv.notify_all();
    server.stop();
    if (listener.joinable()) listener.join();
    for (auto& w : workers)
      if (w.joinable()) w.join();
  }
};

Service::Service(ServiceOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  const ServiceOptions& o = impl_->opts;
  if (o.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(o.host);
  } else if (impl_->server.bind_to_port(o.host, o.port)) {
    impl_->bound_port = o.port;
  }
  if (impl_->bound_port < 0) throw Error("service: cannot bind " + o.host + ":" + std::to_string(o.port));
  return impl_->bound_port;
}

void Service::run() {
  bind();
  impl_->server.listen_after_bind();
}

void Service::start() {
  bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::stop() { impl_->shutdown(); }

int Service::port() const { return impl_->bound_port; }

}  // namespace inrprop
