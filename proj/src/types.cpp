#include "dis2/types.h"

namespace dis2 {

std::string_view to_string(Modality m) { return m == Modality::RGIR ? "RGIR" : "NDSM"; }

std::string BranchId::name() const {
  return std::string(to_string(modality)) + (kind == BranchKind::Dist ? "_Dist" : "_Supp");
}

int BranchId::index() const {
  return (modality == Modality::RGIR ? 0 : 2) + (kind == BranchKind::Dist ? 0 : 1);
}

std::string ScenarioMask::name() const {
  if (!legal()) return "illegal";
  if (is_full()) return "full";
  return rgir_present ? "missing_ndsm" : "missing_rgir";
}

ScenarioMask ScenarioMask::parse(std::string_view name) {
  if (name == "full") return full();
  if (name == "missing_rgir") return missing_rgir();
  if (name == "missing_ndsm") return missing_ndsm();
  throw ConfigError("unknown scenario '" + std::string(name) +
                    "' (expected full, missing_rgir or missing_ndsm)");
}

ScenarioRun route(ScenarioMask mask) {
  if (!mask.legal()) throw Error("illegal scenario mask: no modality present");
  if (mask.is_full()) return {mask, {kRgirDist, kNdsmDist}};
  if (mask.rgir_present) return {mask, {kRgirDist, kRgirSupp}};
  return {mask, {kNdsmDist, kNdsmSupp}};
}

}  // namespace dis2
