#pragma once

#include <array>
#include <compare>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace dis2 {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

enum class Modality { RGIR, NDSM };

inline constexpr std::array<Modality, 2> kModalities{Modality::RGIR, Modality::NDSM};

constexpr int channels(Modality m) { return m == Modality::RGIR ? 3 : 1; }
std::string_view to_string(Modality m);

enum class BranchKind { Dist, Supp };

struct BranchId {
  Modality modality;
  BranchKind kind;

  auto operator<=>(const BranchId&) const = default;
  /// "RGIR_Dist", "NDSM_Supp", ...
  std::string name() const;
  /// 0..3 in the order RGIR_Dist, RGIR_Supp, NDSM_Dist, NDSM_Supp.
  int index() const;
};

inline constexpr BranchId kRgirDist{Modality::RGIR, BranchKind::Dist};
inline constexpr BranchId kRgirSupp{Modality::RGIR, BranchKind::Supp};
inline constexpr BranchId kNdsmDist{Modality::NDSM, BranchKind::Dist};
inline constexpr BranchId kNdsmSupp{Modality::NDSM, BranchKind::Supp};
inline constexpr std::array<BranchId, 4> kAllBranches{kRgirDist, kRgirSupp, kNdsmDist, kNdsmSupp};

/// Which modalities are present. At least one must be.
struct ScenarioMask {
  bool rgir_present = true;
  bool ndsm_present = true;

  static constexpr ScenarioMask full() { return {true, true}; }
  static constexpr ScenarioMask missing_ndsm() { return {true, false}; }
  static constexpr ScenarioMask missing_rgir() { return {false, true}; }

  constexpr bool legal() const { return rgir_present || ndsm_present; }
  constexpr bool is_full() const { return rgir_present && ndsm_present; }
  constexpr bool present(Modality m) const {
    return m == Modality::RGIR ? rgir_present : ndsm_present;
  }

  bool operator==(const ScenarioMask&) const = default;

  /// "full", "missing_rgir" or "missing_ndsm".
  std::string name() const;
  static ScenarioMask parse(std::string_view name);
};

inline constexpr std::array<ScenarioMask, 3> kAllScenarios{
    ScenarioMask::full(), ScenarioMask::missing_rgir(), ScenarioMask::missing_ndsm()};

struct ScenarioRun {
  ScenarioMask scenario;
  std::pair<BranchId, BranchId> active_branches;
};

/// Maps a scenario to the pair of encoder branches that feed fusion.
///   full          -> (RGIR_Dist, NDSM_Dist)
///   missing NDSM  -> (RGIR_Dist, RGIR_Supp)
///   missing RGIR  -> (NDSM_Dist, NDSM_Supp)
ScenarioRun route(ScenarioMask mask);

}  // namespace dis2
