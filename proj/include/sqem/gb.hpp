#pragma once

#include "sqem/channels.hpp"
#include "sqem/metrics.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace sqem {

enum class GbMode { Probabilistic, QuasiDeterministic, Deterministic };

struct KeepRule {
  enum class Kind { DropWorst, Threshold, KeepAll };
  Kind kind = Kind::KeepAll;
  int k = 0;
  double p_min = 0.0;

  static KeepRule drop_worst(int k) { return {Kind::DropWorst, k, 0.0}; }
  static KeepRule threshold(double p_min) { return {Kind::Threshold, 0, p_min}; }
  static KeepRule keep_all() { return {Kind::KeepAll, 0, 0.0}; }
};

// Dense: full composite density matrix. Factorized: exact per-register contraction of the same
// circuit, used when the composite space is too large. Auto picks dense when it fits.
enum class GbEngine { Auto, Dense, Factorized };
enum class OutcomeScope { All, Designated };

struct GbConfig {
  int d = 2;
  int m = 1;
  ComplexMatrix u;
  KrausChannel noise;
  // Optional per-register channels (index 0 = register a, j = b_j). Empty means `noise` everywhere.
  std::vector<KrausChannel> branch_noise;
  // Auxiliary states live on m active qubits followed by aux_ext noiseless qubits that never swap.
  StateVector aux_state;
  StateVector aux_meas_state;
  int aux_ext = 0;
  GbMode mode = GbMode::Probabilistic;
  KeepRule keep = KeepRule::keep_all();
  std::optional<double> cswap_noise;
  std::vector<ComplexMatrix> correction_set;  // empty: single-qubit Cliffords on every qubit
  GbEngine engine = GbEngine::Auto;
  OutcomeScope scope = OutcomeScope::All;

  void validate() const;
  const KrausChannel& channel_at(int position) const;
  long aux_dim() const { return 1L << (m + aux_ext); }
};

struct ProtocolOutcome {
  int control_outcome = 0;
  std::vector<int> aux_outcomes;
  DensityMatrix rho;  // unnormalized, on (reference qubits, register a)
  double probability = 0.0;
  std::optional<ComplexMatrix> correction;
  double fidelity = 1.0;
};

struct GbResult {
  std::vector<ProtocolOutcome> outcomes;
  std::vector<ProtocolOutcome> kept;
  FidelityReport report;
};

inline constexpr long kDenseCap = 2048;
inline constexpr double kZeroOutcome = 1e-12;

ComplexMatrix cswap_unitary(int d, int m);
std::vector<StateVector> generalized_x_basis(int d);

// Orthonormal basis for an auxiliary register with config.aux_meas_state first.
std::vector<StateVector> aux_measurement_basis(const GbConfig& config);

// Input lives on (reference qubits, m system qubits); the reference count is inferred.
std::vector<ProtocolOutcome> run_gb(const GbConfig& config, const StateVector& input);

// Target (1 (x) U)|input> used for all fidelities.
StateVector gb_target(const GbConfig& config, const StateVector& input);
double incoherent_fidelity(const GbConfig& config, const StateVector& input);

struct AnalyticOutput {
  DensityMatrix rho;
  double probability;
};
AnalyticOutput analytic_rho_out(const KrausChannel& noise, const ComplexMatrix& u, const StateVector& phi0,
                                const StateVector& phif, int d, const StateVector& input, int aux_ext = 0);

struct Omega {
  double w1;
  double w2;
};
Omega omega_params(const KrausChannel& noise, const ComplexMatrix& u, const StateVector& phi0,
                   const StateVector& phif, int aux_ext = 0);

struct Bounds {
  double probability;
  double fidelity;
};
Bounds depolarizing_bounds(int d, int m, double p0);

struct ChiUpdate {
  ProcessMatrix chi;
  double probability;
};
ChiUpdate chi_update_full_sensitivity(const ProcessMatrix& chi, int d);

const std::vector<ComplexMatrix>& single_qubit_cliffords();
std::vector<ComplexMatrix> clifford_corrections(int m);

// For each outcome with probability >= kZeroOutcome, picks the correction C maximizing
// <t|(1 (x) C) rho (1 (x) C)^dagger|t> and stores it with the conditional fidelity.
void choose_corrections(std::vector<ProtocolOutcome>& outcomes, const StateVector& target,
                        const std::vector<ComplexMatrix>& correction_set, int ref_qubits);

struct QuasiResult {
  std::vector<ProtocolOutcome> kept;
  FidelityReport report;
};
QuasiResult quasi_deterministic(const GbConfig& config, const StateVector& input,
                                std::vector<ProtocolOutcome> outcomes);

// Runs the protocol and applies the configured post-processing mode.
GbResult run_protocol(const GbConfig& config, const StateVector& input);

// Ideal cSWAP then depolarizing on control and both swapped qubits, once per qubit pair.
// Acts on density matrices of shape [control(2), a (m qubits), b (m qubits)].
using DensityTransformer = std::function<DensityMatrix(const DensityMatrix&)>;
DensityTransformer noisy_cswap(int d, int m, double p_cswap);
double p_relative(double p_cswap, double p0);

struct NoisyGate {
  ComplexMatrix u;
  std::vector<int> targets;
  KrausChannel noise;  // acts on the same targets right after u
};

struct LayeredCircuit {
  ComplexMatrix u_total;
  std::vector<NoisyGate> sequence;
};

// Each layer: cNOT(0 -> 1) then T on both qubits; depolarizing(p0) after every gate.
LayeredCircuit layered_circuit(int n_layers, double p0);
// Noise channel N with (noisy circuit) = N o U_total, canonicalized.
KrausChannel effective_noise(const LayeredCircuit& circuit, int m);

}  // namespace sqem
