#pragma once

#include <stdexcept>
#include <string>

namespace uadan {

/**
 * Which adversarial alignment terms participate in the training objective.
 *
 * The ladder mirrors the standard ablation: plain image-level alignment, its
 * uncertainty-weighted variant, the instance-level counterparts, both levels
 * combined without the curriculum gate, and the full objective with the gated
 * instance term.
 */
enum class AblationMode {
  Baseline,       // detection loss only, source domain only
  ImageAL,        // + unweighted image-level adversarial alignment
  ImageUaAL,      // + entropy-weighted image-level alignment
  InstanceAL,     // + unweighted instance-level alignment
  InstanceUaAL,   // + entropy-weighted instance-level alignment
  UaDAN_noUgCL,   // image UaAL + instance UaAL (no curriculum gate)
  UaDAN,          // image UaAL + gated instance alignment (full objective)
};

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Baseline: return "baseline";
    case AblationMode::ImageAL: return "image_al";
    case AblationMode::ImageUaAL: return "image_ua_al";
    case AblationMode::InstanceAL: return "instance_al";
    case AblationMode::InstanceUaAL: return "instance_ua_al";
    case AblationMode::UaDAN_noUgCL: return "uadan_no_ugcl";
    case AblationMode::UaDAN: return "uadan";
  }
  throw std::logic_error("to_string: unknown ablation mode");
}

inline AblationMode ablation_mode_from_string(const std::string& s) {
  if (s == "baseline") return AblationMode::Baseline;
  if (s == "image_al") return AblationMode::ImageAL;
  if (s == "image_ua_al") return AblationMode::ImageUaAL;
  if (s == "instance_al") return AblationMode::InstanceAL;
  if (s == "instance_ua_al") return AblationMode::InstanceUaAL;
  if (s == "uadan_no_ugcl") return AblationMode::UaDAN_noUgCL;
  if (s == "uadan") return AblationMode::UaDAN;
  throw std::invalid_argument("unknown ablation mode: " + s);
}

inline bool uses_target_stream(AblationMode m) { return m != AblationMode::Baseline; }

inline bool uses_image_alignment(AblationMode m) {
  return m == AblationMode::ImageAL || m == AblationMode::ImageUaAL ||
         m == AblationMode::UaDAN_noUgCL || m == AblationMode::UaDAN;
}

inline bool uses_instance_alignment(AblationMode m) {
  return m == AblationMode::InstanceAL || m == AblationMode::InstanceUaAL ||
         m == AblationMode::UaDAN_noUgCL || m == AblationMode::UaDAN;
}

/** True when the image-level term carries entropy weights. */
inline bool image_alignment_weighted(AblationMode m) {
  return m == AblationMode::ImageUaAL || m == AblationMode::UaDAN_noUgCL ||
         m == AblationMode::UaDAN;
}

/** The instance-level weighting scheme active in a mode. */
enum class InstanceWeighting { none, plain, entropy, gated };

inline InstanceWeighting instance_weighting(AblationMode m) {
  switch (m) {
    case AblationMode::InstanceAL: return InstanceWeighting::plain;
    case AblationMode::InstanceUaAL:
    case AblationMode::UaDAN_noUgCL: return InstanceWeighting::entropy;
    case AblationMode::UaDAN: return InstanceWeighting::gated;
    default: return InstanceWeighting::none;
  }
}

inline const AblationMode kAllAblationModes[] = {
    AblationMode::Baseline,     AblationMode::ImageAL,      AblationMode::ImageUaAL,
    AblationMode::InstanceAL,   AblationMode::InstanceUaAL, AblationMode::UaDAN_noUgCL,
    AblationMode::UaDAN,
};

}  // namespace uadan
