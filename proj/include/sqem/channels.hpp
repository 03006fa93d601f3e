#pragma once

#include "sqem/qmath.hpp"

#include <cstdint>
#include <vector>

namespace sqem {

struct KrausChannel {
  std::vector<ComplexMatrix> operators;

  KrausChannel() = default;
  explicit KrausChannel(std::vector<ComplexMatrix> ops, bool check = true);

  long dim() const { return operators.front().rows(); }
  int rank() const { return static_cast<int>(operators.size()); }
  bool is_complete(double tol = kTol) const;
  static KrausChannel identity(long dim);
  static KrausChannel unitary(const ComplexMatrix& u);
};

// Coefficients over Pauli products sigma_a (order {I, Z, X, Y} per qubit, base 4).
struct ProcessMatrix {
  int m = 0;
  ComplexMatrix lambda;

  ProcessMatrix() = default;
  ProcessMatrix(int qubits, ComplexMatrix l);

  double p_ne() const { return lambda(0, 0).real(); }
  // Throws ValidationError unless Hermitian, PSD, Cauchy-Schwarz and (optionally) trace preserving.
  // Post-selected maps normalized by their Choi trace are generally not trace preserving.
  void validate(double tol = kTol, bool require_trace_preserving = true) const;
  bool trace_preserving(double tol = kTol) const;
};

KrausChannel dephasing(double p0);
KrausChannel depolarizing(double p0);
KrausChannel tensor_channel(const KrausChannel& ch, int m);
// Product channel of independent per-qubit channels, first entry on the most significant qubit.
KrausChannel tensor_product(const std::vector<KrausChannel>& chs);

DensityMatrix apply(const KrausChannel& ch, const DensityMatrix& rho, const std::vector<int>& targets);
// Channel on a bare matrix whose dimension equals the channel's.
ComplexMatrix apply(const KrausChannel& ch, const ComplexMatrix& rho);

ProcessMatrix kraus_to_chi(const KrausChannel& ch);
KrausChannel chi_to_kraus(const ProcessMatrix& chi);
// Minimal orthogonal Kraus set with the same action.
KrausChannel canonicalize(const KrausChannel& ch);

// Isometry V: H_s -> H_s (x) H_env, with environment dimension equal to the Kraus count.
ComplexMatrix stinespring(const KrausChannel& ch);

// first, then second.
KrausChannel compose(const KrausChannel& first, const KrausChannel& second);

KrausChannel random_channel(int m, int rank, std::uint64_t seed);
ComplexMatrix haar_unitary(long dim, std::uint64_t seed);
StateVector haar_state(long dim, std::uint64_t seed);

// The Pauli-product matrices for m qubits in basis order.
const std::vector<ComplexMatrix>& pauli_basis(int m);

}  // namespace sqem
