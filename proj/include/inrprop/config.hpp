#pragma once

// JSON forms of every module config plus the combined run config used by the
// command-line tools and the HTTP service.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "inrprop/feature_field.hpp"
#include "inrprop/flow_field.hpp"
#include "inrprop/maskops.hpp"
#include "inrprop/matching.hpp"
#include "inrprop/metrics.hpp"

namespace inrprop {

// Each parser overlays the keys present in `j` onto `base`, so a partial
// object acts as a patch. Unknown keys and wrong types raise SchemaError with
// the field path prefixed by `path`.

nlohmann::json to_json(const FieldFitConfig& c);
FieldFitConfig field_config_from_json(const nlohmann::json& j, FieldFitConfig base = {},
                                      const std::string& path = "");
nlohmann::json to_json(const FlowFitConfig& c);
FlowFitConfig flow_config_from_json(const nlohmann::json& j, FlowFitConfig base = {}, const std::string& path = "");
nlohmann::json to_json(const MatchConfig& c);
MatchConfig match_config_from_json(const nlohmann::json& j, MatchConfig base = {}, const std::string& path = "");
nlohmann::json to_json(const InteriorConfig& c);
InteriorConfig interior_config_from_json(const nlohmann::json& j, InteriorConfig base = {},
                                         const std::string& path = "");
nlohmann::json to_json(const KdeConfig& c);
KdeConfig kde_config_from_json(const nlohmann::json& j, KdeConfig base = {}, const std::string& path = "");
nlohmann::json to_json(const MetricsConfig& c);
MetricsConfig metrics_config_from_json(const nlohmann::json& j, MetricsConfig base = {},
                                       const std::string& path = "");

struct RunConfig {
  /// Global seed. Sub-configs without their own "seed" key inherit it.
  std::uint64_t seed = 0;
  FieldFitConfig field;
  FlowFitConfig flow;
  MatchConfig match;
  InteriorConfig interior;
  KdeConfig kde;
  MetricsConfig metrics;

  /// Runs every sub-config's validate().
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

}  // namespace inrprop
