#include "inrprop/config.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <type_traits>

#include "inrprop/error.hpp"

namespace inrprop {

namespace {

// Reads known keys off one JSON object and rejects the rest.
class Overlay {
 public:
  Overlay(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_, "must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    const std::string where = field(key);
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) throw SchemaError(where, "must be a finite number");
      out = v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw SchemaError(where, "must be an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned()) throw SchemaError(where, "must be non-negative");
      if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) throw SchemaError(where, "out of range");
      } else {
        const auto s = v.get<std::int64_t>();
        if (s < static_cast<std::int64_t>(std::numeric_limits<T>::min())) throw SchemaError(where, "out of range");
      }
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw SchemaError(where, "must be an array of numbers");
      std::vector<double> xs;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw SchemaError(where + "[" + std::to_string(i) + "]", "must be a number");
        xs.push_back(v[i].get<double>());
      }
      out = std::move(xs);
    } else {
      static_assert(std::is_same_v<T, std::string>);
      if (!v.is_string()) throw SchemaError(where, "must be a string");
      out = v.get<std::string>();
    }
  }

  void known(const char* key) { seen_.insert(key); }
  bool has(const char* key) const { return j_.contains(key); }
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw SchemaError(path_.empty() ? k : path_ + "." + k, "unknown field");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

nlohmann::json to_json(const FieldFitConfig& c) {
  return {{"epochs", c.epochs},
          {"cells_per_step", c.cells_per_step},
          {"steps_per_epoch", c.steps_per_epoch},
          {"lr", c.lr},
          {"hr_size", c.hr_size},
          {"hr_width", c.hr_width},
          {"seed", c.seed},
          {"hidden_dim", c.hidden_dim},
          {"n_hidden_layers", c.n_hidden_layers},
          {"omega0", c.omega0},
          {"activation", std::string(to_string(c.activation))},
          {"n_frequencies", c.n_frequencies}};
}

FieldFitConfig field_config_from_json(const nlohmann::json& j, FieldFitConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("epochs", c.epochs);
  o.read("cells_per_step", c.cells_per_step);
  o.read("steps_per_epoch", c.steps_per_epoch);
  o.read("lr", c.lr);
  o.read("hr_size", c.hr_size);
  o.read("hr_width", c.hr_width);
  o.read("seed", c.seed);
  o.read("hidden_dim", c.hidden_dim);
  o.read("n_hidden_layers", c.n_hidden_layers);
  o.read("omega0", c.omega0);
  std::string act(to_string(c.activation));
  o.read("activation", act);
  try {
    c.activation = activation_from_string(act);
  } catch (const ConfigError& e) {
    throw SchemaError(o.field("activation"), e.what());
  }
  o.read("n_frequencies", c.n_frequencies);
  o.finish();
  return c;
}

nlohmann::json to_json(const FlowFitConfig& c) {
  return {{"epochs", c.epochs},           {"lr", c.lr},         {"lambda_tv", c.lambda_tv},
          {"lambda_l1", c.lambda_l1},     {"sample_grid", c.sample_grid}, {"tv_grid", c.tv_grid},
          {"seed", c.seed},               {"hidden_dim", c.hidden_dim},   {"omega0", c.omega0}};
}

FlowFitConfig flow_config_from_json(const nlohmann::json& j, FlowFitConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("epochs", c.epochs);
  o.read("lr", c.lr);
  o.read("lambda_tv", c.lambda_tv);
  o.read("lambda_l1", c.lambda_l1);
  o.read("sample_grid", c.sample_grid);
  o.read("tv_grid", c.tv_grid);
  o.read("seed", c.seed);
  o.read("hidden_dim", c.hidden_dim);
  o.read("omega0", c.omega0);
  o.finish();
  return c;
}

nlohmann::json to_json(const MatchConfig& c) {
  nlohmann::json j = {{"search_stride", c.search_stride}};
  j["sigma"] = c.sigma ? nlohmann::json(*c.sigma) : nlohmann::json(nullptr);
  return j;
}

MatchConfig match_config_from_json(const nlohmann::json& j, MatchConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("search_stride", c.search_stride);
  if (o.has("sigma") && j.at("sigma").is_null()) {
    o.known("sigma");
    c.sigma.reset();
  } else if (o.has("sigma")) {
    double s = 0.0;
    o.read("sigma", s);
    c.sigma = s;
  }
  o.finish();
  return c;
}

nlohmann::json to_json(const InteriorConfig& c) { return {{"d_min", c.d_min}}; }

InteriorConfig interior_config_from_json(const nlohmann::json& j, InteriorConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("d_min", c.d_min);
  o.finish();
  return c;
}

nlohmann::json to_json(const KdeConfig& c) { return {{"sigma", c.sigma}, {"tau", c.tau}}; }

KdeConfig kde_config_from_json(const nlohmann::json& j, KdeConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("sigma", c.sigma);
  o.read("tau", c.tau);
  o.finish();
  return c;
}

nlohmann::json to_json(const MetricsConfig& c) {
  return {{"canvas_norm", c.canvas_norm}, {"pck_thresholds", c.pck_thresholds}, {"delta_thresholds", c.delta_thresholds}};
}

MetricsConfig metrics_config_from_json(const nlohmann::json& j, MetricsConfig c, const std::string& path) {
  Overlay o(j, path);
  o.read("canvas_norm", c.canvas_norm);
  o.read("pck_thresholds", c.pck_thresholds);
  o.read("delta_thresholds", c.delta_thresholds);
  o.finish();
  return c;
}

void RunConfig::validate() const {
  field.validate();
  flow.validate();
  match.validate();
  interior.validate();
  kde.validate();
  metrics.validate();
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"field", to_json(c.field)},
          {"flow", to_json(c.flow)},
          {"match", to_json(c.match)},
          {"interior", to_json(c.interior)},
          {"kde", to_json(c.kde)},
          {"metrics", to_json(c.metrics)}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  Overlay o(j, "");
  if (o.has("seed")) {
    o.read("seed", c.seed);
    c.field.seed = c.seed;
    c.flow.seed = c.seed;
  }
  o.known("seed");
  for (const char* key : {"field", "flow", "match", "interior", "kde", "metrics"}) o.known(key);
  o.finish();
  if (j.contains("field")) c.field = field_config_from_json(j.at("field"), c.field, "field");
  if (j.contains("flow")) c.flow = flow_config_from_json(j.at("flow"), c.flow, "flow");
  if (j.contains("match")) c.match = match_config_from_json(j.at("match"), c.match, "match");
  if (j.contains("interior")) c.interior = interior_config_from_json(j.at("interior"), c.interior, "interior");
  if (j.contains("kde")) c.kde = kde_config_from_json(j.at("kde"), c.kde, "kde");
  if (j.contains("metrics")) c.metrics = metrics_config_from_json(j.at("metrics"), c.metrics, "metrics");
  return c;
}

}  // namespace inrprop
