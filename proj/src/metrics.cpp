#include "inrprop/metrics.hpp"

#include <charconv>
#include <cmath>

#include "inrprop/error.hpp"

namespace inrprop {

namespace {

void check_thresholds(const std::vector<double>& t, const char* name) {
  if (t.empty()) throw ConfigError(std::string("metrics: ") + name + " is empty");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] > 0.0)) throw ConfigError(std::string("metrics: ") + name + " must be positive");
    if (i > 0 && !(t[i] > t[i - 1])) throw ConfigError(std::string("metrics: ") + name + " must be ascending");
  }
}

}  // namespace

void MetricsConfig::validate() const {
  if (!(canvas_norm > 0.0)) throw ConfigError("metrics: canvas_norm must be > 0");
  check_thresholds(pck_thresholds, "pck_thresholds");
  check_thresholds(delta_thresholds, "delta_thresholds");
}

std::vector<double> normalized_errors(const std::vector<Point2>& pred, const std::vector<Point2>& gt, Canvas canvas,
                                      double canvas_norm) {
  if (pred.size() != gt.size())
    throw ContractViolation("metrics: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(gt.size()) + " ground-truth points");
  if (canvas.width < 1 || canvas.height < 1) throw ContractViolation("metrics: empty canvas");
  const double sx = canvas_norm / canvas.width;
  const double sy = canvas_norm / canvas.height;
  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) e[i] = std::hypot((pred[i].x - gt[i].x) * sx, (pred[i].y - gt[i].y) * sy);
  return e;
}

std::vector<double> pck(const std::vector<Point2>& pred, const std::vector<Point2>& gt, Canvas canvas,
                        const MetricsConfig& cfg) {
  cfg.validate();
  if (pred.empty() && gt.empty()) throw ContractViolation("pck: no points");
  const std::vector<double> e = normalized_errors(pred, gt, canvas, cfg.canvas_norm);
  std::vector<double> out;
  for (double t : cfg.pck_thresholds) {
    std::size_t hit = 0;
    for (double v : e) hit += v < t ? 1 : 0;
    out.push_back(static_cast<double>(hit) / static_cast<double>(e.size()));
  }
  return out;
}

double delta_avg(const std::vector<std::vector<Point2>>& pred, const std::vector<std::vector<Point2>>& gt,
                 Canvas canvas, const MetricsConfig& cfg, const std::optional<std::vector<std::vector<bool>>>& visible) {
  cfg.validate();
  if (pred.size() != gt.size())
    throw ContractViolation("delta_avg: " + std::to_string(pred.size()) + " predicted frames for " +
                            std::to_string(gt.size()) + " ground-truth frames");
  if (visible && visible->size() != gt.size()) throw ContractViolation("delta_avg: visibility frame count mismatch");
  std::vector<double> errors;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].size() != gt[f].size())
      throw ContractViolation("delta_avg: frame " + std::to_string(f) + " has mismatched point counts");
    if (visible && (*visible)[f].size() != gt[f].size())
      throw ContractViolation("delta_avg: frame " + std::to_string(f) + " visibility has the wrong length");
    const std::vector<double> e = normalized_errors(pred[f], gt[f], canvas, cfg.canvas_norm);
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!visible || (*visible)[f][i]) errors.push_back(e[i]);
  }
  if (errors.empty()) throw ContractViolation("delta_avg: no scored points");
  double acc = 0.0;
  for (double t : cfg.delta_thresholds) {
    std::size_t hit = 0;
    for (double v : errors) hit += v < t ? 1 : 0;
    acc += static_cast<double>(hit) / static_cast<double>(errors.size());
  }
  return acc / static_cast<double>(cfg.delta_thresholds.size());
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw ContractViolation("dice: masks are " + std::to_string(a.width) + "x" + std::to_string(a.height) + " and " +
                            std::to_string(b.width) + "x" + std::to_string(b.height));
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i];
    nb += b.bits[i];
    inter += a.bits[i] & b.bits[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

nlohmann::json to_json(const MetricRecord& r) {
  return {{"metric", r.metric}, {"label", r.label}, {"value", r.value}, {"count", r.count}, {"config", r.config}};
}

std::string to_csv(const std::vector<MetricRecord>& records) {
  std::string out = "metric,label,value,count\n";
  for (const auto& r : records) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, r.value).ptr;
    out += r.metric + ',' + r.label + ',' + std::string(buf, end) + ',' + std::to_string(r.count) + '\n';
  }
  return out;
}

}  // namespace inrprop
