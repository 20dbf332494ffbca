#pragma once

// Glue shared by the command-line tools and the HTTP service: field
// references, checkpoint metadata and annotation propagation.

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "inrprop/config.hpp"
#include "inrprop/flow_field.hpp"
#include "inrprop/io.hpp"
#include "inrprop/maskops.hpp"

namespace inrprop {

/// "name" or "name:t". Only a trailing ":<digits>" is read as the frame.
struct FrameRef {
  std::string name;
  std::optional<int> frame;
};
FrameRef parse_frame_ref(std::string_view text);

/// Pair over two fitted fields; the same pointer on both sides makes an
/// intra-video pair.
PairSpec make_pair(std::shared_ptr<const FeatureField> src, int src_t, std::shared_ptr<const FeatureField> tgt,
                   int tgt_t);

/// Metadata stored in feature-field checkpoints.
nlohmann::json field_meta(const FeatureVolume& volume, const FieldFitConfig& cfg, const FieldFit& fit);

/// CSV "epoch,loss" with round-trippable numbers.
std::string loss_trace_csv(const std::vector<double>& trace);

struct PropagationRun {
  PropagationDoc doc;
  /// Set in mask mode.
  std::optional<MaskPropagation> mask;
};

/// Points mode matches every annotated point; mask mode runs interior
/// extraction, matching and KDE on `mask`. The annotation must sit on the
/// displacement field's source frame and share its canvas. Failures are
/// StageErrors tagged "annotation", "match", "interior" or "kde".
PropagationRun propagate_annotation(const AnnotationDoc& annotation, const std::optional<BinaryMask>& mask,
                                    const PairSpec& pair, const DisplacementField& disp, const RunConfig& cfg,
                                    const std::string& mode);

}  // namespace inrprop
