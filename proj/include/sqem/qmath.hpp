#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqem {

using cplx = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using StateVector = Eigen::VectorXcd;

inline constexpr double kTol = 1e-9;

// Thrown for violated preconditions (dimension mismatch, bad index, bad config).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a simulation would exceed a configured size cap.
class CapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Local dimensions of a composite space; subsystem 0 is the most significant digit.
struct SubsystemShape {
  std::vector<int> dims;

  SubsystemShape() = default;
  explicit SubsystemShape(std::vector<int> d);
  static SubsystemShape qubits(int n);

  int size() const { return static_cast<int>(dims.size()); }
  long total() const;
  std::vector<long> strides() const;
  bool operator==(const SubsystemShape& o) const { return dims == o.dims; }
};

struct DensityMatrix {
  ComplexMatrix matrix;
  SubsystemShape shape;
  bool normalized = true;

  DensityMatrix() = default;
  DensityMatrix(ComplexMatrix m, SubsystemShape s, bool norm = true);

  static DensityMatrix pure(const StateVector& psi, SubsystemShape s);
  double trace() const { return matrix.trace().real(); }
  long dim() const { return matrix.rows(); }
  // Throws ValidationError if Hermiticity, positivity or the trace rule fails.
  void validate(double tol = kTol) const;
};

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix kron_all(const std::vector<ComplexMatrix>& ops);
StateVector kron(const StateVector& a, const StateVector& b);
StateVector kron_all(const std::vector<StateVector>& vs);

ComplexMatrix embed(const ComplexMatrix& op, const std::vector<int>& targets,
                    const SubsystemShape& shape);

DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<int>& keep);

// <ket|rho|ket> on the targets; targets are removed, the rest keep their order.
DensityMatrix project(const DensityMatrix& rho, const StateVector& ket,
                      const std::vector<int>& targets);

// op * rho * op^dagger with op acting on targets, without forming the full embedding.
DensityMatrix conjugate(const DensityMatrix& rho, const ComplexMatrix& op,
                        const std::vector<int>& targets);
void conjugate_inplace(ComplexMatrix& rho, const SubsystemShape& shape,
                       const ComplexMatrix& op, const std::vector<int>& targets);
StateVector apply(const StateVector& psi, const SubsystemShape& shape, const ComplexMatrix& op,
                  const std::vector<int>& targets);
// <ket| on targets applied to a pure state.
StateVector project(const StateVector& psi, const SubsystemShape& shape, const StateVector& ket,
                    const std::vector<int>& targets);
SubsystemShape remove_subsystems(const SubsystemShape& shape, const std::vector<int>& targets);

// Index bookkeeping for an operator acting on a subset of subsystems.
struct LocalIndex {
  std::vector<long> offsets;  // one per local basis state of the targets
  std::vector<long> bases;    // one per basis state of the complement
  LocalIndex(const SubsystemShape& shape, const std::vector<int>& targets);
};

bool is_unitary(const ComplexMatrix& m, double tol = kTol);
bool is_hermitian(const ComplexMatrix& m, double tol = kTol);
double max_abs(const ComplexMatrix& m);

// Hermitian matrix functions via eigendecomposition; negative eigenvalues clamp to 0.
ComplexMatrix psd_sqrt(const ComplexMatrix& m);

StateVector basis_state(long dim, long index);
StateVector basis_state(const SubsystemShape& shape, const std::vector<int>& digits);
std::vector<int> digits_of(long index, const SubsystemShape& shape);

// Orthonormal basis whose first element is `first`, completed by Gram-Schmidt over the
// computational basis in canonical order.
std::vector<StateVector> complete_basis(const StateVector& first, double tol = 1e-10);

// Maximally entangled |Phi+>^{m} with the reference qubits first: (ref_1..ref_m, sys_1..sys_m).
StateVector max_entangled(int m);

namespace gates {
ComplexMatrix I2();
ComplexMatrix X();
ComplexMatrix Y();
ComplexMatrix Z();
ComplexMatrix H();
ComplexMatrix S();
ComplexMatrix T();
ComplexMatrix Rx(double theta);
ComplexMatrix Rz(double theta);
ComplexMatrix CNOT();  // control is the first qubit
ComplexMatrix CZ();
ComplexMatrix SWAP();
ComplexMatrix identity(long dim);
// Single-qubit Pauli product for base-4 digits in the order {I, Z, X, Y}, first qubit most significant.
ComplexMatrix pauli_product(int index, int m);
}  // namespace gates

namespace states {
StateVector zero();
StateVector one();
StateVector plus();
StateVector minus();
StateVector right();  // (|0> + i|1>)/sqrt2
StateVector left();   // (|0> - i|1>)/sqrt2
StateVector tensor_power(const StateVector& s, int m);
}  // namespace states

}  // namespace sqem
