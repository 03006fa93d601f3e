#pragma once

#include "sqem/gb.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace sqem {

// Averaged branch evolution relative to U, including the vacuum phase: sum_r p_r V_r nu_r^* U^dagger.
struct VacuumInterferenceOp {
  ComplexMatrix w;

  VacuumInterferenceOp() = default;
  explicit VacuumInterferenceOp(ComplexMatrix op);
  double spectral_norm() const;
};

VacuumInterferenceOp vio_dephasing(double p0);    // (2 p0 - 1)^(1/4) 1
VacuumInterferenceOp vio_depolarizing(double p0); // ((4 p0 - 1) / 3)^(3/8) 1
VacuumInterferenceOp vio_tensor(const std::vector<VacuumInterferenceOp>& parts);
VacuumInterferenceOp vio_tensor_power(const VacuumInterferenceOp& op, int m);

// W = sum_j e^{-i phi_j} sqrt(q_j) K_j for vacuum amplitudes sqrt(q_j) e^{i phi_j} (sum q_j = 1).
// Empty weights default to q_j = Tr(K_j^dagger K_j) / dim.
VacuumInterferenceOp vio_from_phases(const KrausChannel& noise, const std::vector<double>& phases,
                                     std::vector<double> weights = {});

enum class FieldKind { Dephasing, Depolarizing };

struct StochasticEstimate {
  double p0 = 1.0;
  double p0_error = 0.0;
  ComplexMatrix vio;         // sample mean of the noise unitary
  double vio_scalar = 1.0;   // Re Tr(vio) / 2
  double vio_error = 0.0;
  int steps = 0;
};

// Gaussian field with variance 2 Gamma per component, held constant over steps with Gamma dt <= 1e-3.
// Dephasing: field along z. Depolarizing: isotropic field.
StochasticEstimate stochastic_field_oracle(FieldKind kind, double gamma_t, long n_samples, std::uint64_t seed,
                                           int jobs = 1);

double field_p0(FieldKind kind, double gamma_t);  // closed-form no-error probability
double field_vio(FieldKind kind, double gamma_t); // closed-form VIO scalar

enum class IbMode { Probabilistic, Deterministic };

struct IbConfig {
  int d = 2;
  int m = 1;
  ComplexMatrix u;
  KrausChannel noise;
  VacuumInterferenceOp vio;
  std::vector<VacuumInterferenceOp> branch_vio;  // optional per-branch override
  IbMode mode = IbMode::Probabilistic;
  std::optional<std::vector<ComplexMatrix>> correction_set;  // deterministic mode only; empty list = Cliffords

  void validate() const;
  const ComplexMatrix& w_at(int branch) const;
};

// One outcome per control element l = 0..d-1.
std::vector<ProtocolOutcome> ib_output(const IbConfig& config, const StateVector& input);

struct IbGate {
  ComplexMatrix u;
  KrausChannel noise;
  VacuumInterferenceOp vio;
};
std::vector<ProtocolOutcome> ib_sequence(const std::vector<IbGate>& gates, int d, const StateVector& input);

struct IbResult {
  std::vector<ProtocolOutcome> outcomes;
  FidelityReport report;
};
IbResult run_ib(const IbConfig& config, const StateVector& input);

// Product of U over a sequence, in application order.
ComplexMatrix sequence_unitary(const std::vector<IbGate>& gates);

}  // namespace sqem
