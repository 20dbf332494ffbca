#include "inrprop/pipeline.hpp"

#include <charconv>

#include "inrprop/error.hpp"

namespace inrprop {

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

FrameRef parse_frame_ref(std::string_view text) {
  FrameRef ref{std::string(text), std::nullopt};
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) return ref;
  const std::string_view tail = text.substr(colon + 1);
  int frame = 0;
  const auto r = std::from_chars(tail.data(), tail.data() + tail.size(), frame);
  if (r.ec != std::errc() || r.ptr != tail.data() + tail.size() || frame < 0) return ref;
  ref.name = std::string(text.substr(0, colon));
  ref.frame = frame;
  return ref;
}

PairSpec make_pair(std::shared_ptr<const FeatureField> src, int src_t, std::shared_ptr<const FeatureField> tgt,
                   int tgt_t) {
  PairSpec p;
  p.src_id = src ? src->video_id() : "";
  p.tgt_id = tgt ? tgt->video_id() : "";
  p.src = std::move(src);
  p.src_t = src_t;
  p.tgt = std::move(tgt);
  p.tgt_t = tgt_t;
  return p;
}

nlohmann::json field_meta(const FeatureVolume& volume, const FieldFitConfig& cfg, const FieldFit& fit) {
  return {{"config", to_json(cfg)},
          {"volume",
           {{"frames", volume.frames},
            {"height", volume.height},
            {"width", volume.width},
            {"dim", volume.dim},
            {"source_tag", volume.source_tag}}},
          {"final_loss", fit.loss_trace.empty() ? 0.0 : fit.loss_trace.back()},
          {"engine_version", std::string(engine_version())}};
}

std::string loss_trace_csv(const std::vector<double>& trace) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i) + "," + shortest(trace[i]) + "\n";
  return out;
}

PropagationRun propagate_annotation(const AnnotationDoc& annotation, const std::optional<BinaryMask>& mask,
                                    const PairSpec& pair, const DisplacementField& disp, const RunConfig& cfg,
                                    const std::string& mode) {
  PropagationRun run;
  PropagationDoc& doc = run.doc;
  try {
    if (mode != "points" && mode != "mask") throw SchemaError("mode", "must be \"points\" or \"mask\"");
    pair.validate();
    const PairMeta& m = disp.meta();
    if (annotation.frame != m.src_t || annotation.frame != pair.src_t)
      throw ContractViolation("annotation is on frame " + std::to_string(annotation.frame) +
                              " but the displacement field starts at frame " + std::to_string(m.src_t));
    if (!m.src_video.empty() && annotation.video_id != m.src_video)
      throw ContractViolation("annotation video '" + annotation.video_id + "' does not match the flow source '" +
                              m.src_video + "'");
    if (annotation.canvas != pair.src->canvas() || annotation.canvas != disp.canvas())
      throw ContractViolation("annotation canvas " + std::to_string(annotation.canvas.width) + "x" +
                              std::to_string(annotation.canvas.height) + " differs from the field canvas " +
                              std::to_string(pair.src->canvas().width) + "x" +
                              std::to_string(pair.src->canvas().height));
    if (mode == "points" && (!annotation.points || annotation.points->empty()))
      throw SchemaError("points", "points mode needs at least one point");
    if (mode == "mask") {
      if (!mask) throw SchemaError("mask_ref", "mask mode needs a mask");
      if (mask->canvas() != annotation.canvas) throw ContractViolation("mask canvas differs from the annotation canvas");
    }
  } catch (const std::exception& e) {
    rethrow_in_stage("annotation", e);
  }

  doc.engine_version = std::string(engine_version());
  doc.seed = cfg.seed;
  doc.source = to_json(annotation);
  doc.target_video = disp.meta().tgt_video;
  doc.target_frame = disp.meta().tgt_t;
  doc.mode = mode;
  doc.configs = {{"match", to_json(cfg.match)}, {"flow_seed", cfg.flow.seed}};

  if (mode == "points") {
    try {
      const std::vector<Point2> pts = annotation.point_list();
      doc.results = match_points(pts, pair, disp, cfg.match);
    } catch (const std::exception& e) {
      rethrow_in_stage("match", e);
    }
    return run;
  }

  doc.configs["interior"] = to_json(cfg.interior);
  doc.configs["kde"] = to_json(cfg.kde);
  run.mask = propagate_mask(*mask, pair, disp, cfg.match, cfg.interior, cfg.kde);
  const InteriorPoints& ip = run.mask->interior;
  const char* level = ip.level == InteriorPoints::Level::requested       ? "requested"
                      : ip.level == InteriorPoints::Level::unit_distance ? "unit_distance"
                                                                          : "all_foreground";
  doc.mask_outputs = {{"interior_points", ip.points.size()},
                      {"interior_level", level},
                      {"d_min_used", ip.d_min_used},
                      {"foreground", run.mask->mask.count()}};
  return run;
}

}  // namespace inrprop
