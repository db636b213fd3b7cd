#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pegp/pet.hpp"

namespace pegp {

/// Properties checked by `pegp verify`, in the order they run.
inline const std::vector<std::string> kVerifyProperties = {"svd", "gradients", "orthogonality", "idempotence",
                                                           "eta_scaling"};

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Runs every property. `inject` names a property whose computation gets a
/// deliberate defect (empty: none), so the suite can prove it catches faults.
std::vector<PropertyResult> run_verify_suite(const std::string& inject = {});

/// Old-task probe-logit drift after one SGD step on a new-task batch, at
/// step eta and eta / 2, with and without projection. The model (d=16,
/// depth 2) is trained on one task, its bases are built from two probe
/// samples with epsilon = `epsilon`, and the drift is the Frobenius norm of
/// the logit change over those probes.
struct DriftMeasurement {
  double projected_full = 0.0, projected_half = 0.0;
  double unprojected_full = 0.0, unprojected_half = 0.0;
  std::size_t basis_columns = 0;  // PET sites only

  double projected_ratio() const { return projected_full / projected_half; }
  double unprojected_ratio() const { return unprojected_full / unprojected_half; }
};

DriftMeasurement measure_logit_drift(PetParadigm paradigm, double eta, std::uint64_t seed, double epsilon = 1e-10,
                                     double beta = 0.0);

}  // namespace pegp
