#include "sqem/qmath.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sqem {

SubsystemShape::SubsystemShape(std::vector<int> d) : dims(std::move(d)) {
  for (int x : dims)
    if (x < 2) throw ValidationError("subsystem dimension must be >= 2");
}

SubsystemShape SubsystemShape::qubits(int n) { return SubsystemShape(std::vector<int>(n, 2)); }

long SubsystemShape::total() const {
  long t = 1;
  for (int x : dims) t *= x;
  return t;
}

std::vector<long> SubsystemShape::strides() const {
  std::vector<long> s(dims.size());
  long acc = 1;
  for (int k = size() - 1; k >= 0; --k) {
    s[k] = acc;
    acc *= dims[k];
  }
  return s;
}

DensityMatrix::DensityMatrix(ComplexMatrix m, SubsystemShape s, bool norm)
    : matrix(std::move(m)), shape(std::move(s)), normalized(norm) {
  if (matrix.rows() != matrix.cols()) throw ValidationError("density matrix must be square");
  if (matrix.rows() != shape.total()) throw ValidationError("density matrix does not match shape");
}

DensityMatrix DensityMatrix::pure(const StateVector& psi, SubsystemShape s) {
  return DensityMatrix(psi * psi.adjoint(), std::move(s), true);
}

void DensityMatrix::validate(double tol) const {
  if (!is_hermitian(matrix, tol)) throw ValidationError("density matrix not Hermitian");
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(matrix, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol) throw ValidationError("density matrix not positive");
  double tr = trace();
  if (normalized && std::abs(tr - 1.0) > tol) throw ValidationError("density matrix not normalized");
  if (!normalized && (tr < -tol || tr > 1.0 + tol))
    throw ValidationError("unnormalized density matrix trace outside [0,1]");
}

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix r(a.rows() * b.rows(), a.cols() * b.cols());
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < a.cols(); ++j)
      r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return r;
}

ComplexMatrix kron_all(const std::vector<ComplexMatrix>& ops) {
  ComplexMatrix r = ComplexMatrix::Identity(1, 1);
  for (const auto& o : ops) r = kron(r, o);
  return r;
}

StateVector kron(const StateVector& a, const StateVector& b) {
  StateVector r(a.size() * b.size());
  for (long i = 0; i < a.size(); ++i) r.segment(i * b.size(), b.size()) = a(i) * b;
  return r;
}

StateVector kron_all(const std::vector<StateVector>& vs) {
  StateVector r = StateVector::Ones(1);
  for (const auto& v : vs) r = kron(r, v);
  return r;
}

namespace {

void check_targets(const SubsystemShape& shape, const std::vector<int>& targets) {
  std::vector<int> seen;
  for (int t : targets) {
    if (t < 0 || t >= shape.size()) throw ValidationError("subsystem index out of range");
    if (std::find(seen.begin(), seen.end(), t) != seen.end())
      throw ValidationError("duplicate subsystem index");
    seen.push_back(t);
  }
}

long target_dim(const SubsystemShape& shape, const std::vector<int>& targets) {
  long d = 1;
  for (int t : targets) d *= shape.dims[t];
  return d;
}

std::vector<int> complement(const SubsystemShape& shape, const std::vector<int>& targets) {
  std::vector<int> rest;
  for (int k = 0; k < shape.size(); ++k)
    if (std::find(targets.begin(), targets.end(), k) == targets.end()) rest.push_back(k);
  return rest;
}

// Offsets of all digit combinations of `subs` (first listed is most significant).
std::vector<long> offsets_for(const SubsystemShape& shape, const std::vector<int>& subs) {
  auto st = shape.strides();
  std::vector<long> out{0};
  for (int s : subs) {
    std::vector<long> next;
    next.reserve(out.size() * shape.dims[s]);
    for (long o : out)
      for (int v = 0; v < shape.dims[s]; ++v) next.push_back(o + v * st[s]);
    out = std::move(next);
  }
  return out;
}

}  // namespace

LocalIndex::LocalIndex(const SubsystemShape& shape, const std::vector<int>& targets) {
  check_targets(shape, targets);
  offsets = offsets_for(shape, targets);
  bases = offsets_for(shape, complement(shape, targets));
}

SubsystemShape remove_subsystems(const SubsystemShape& shape, const std::vector<int>& targets) {
  SubsystemShape r;
  for (int k : complement(shape, targets)) r.dims.push_back(shape.dims[k]);
  return r;
}

ComplexMatrix embed(const ComplexMatrix& op, const std::vector<int>& targets,
                    const SubsystemShape& shape) {
  check_targets(shape, targets);
  long td = target_dim(shape, targets);
  if (op.rows() != td || op.cols() != td) throw ValidationError("operator does not match targets");
  LocalIndex li(shape, targets);
  long n = shape.total();
  ComplexMatrix full = ComplexMatrix::Zero(n, n);
  for (long b : li.bases)
    for (long i = 0; i < td; ++i)
      for (long j = 0; j < td; ++j) full(b + li.offsets[i], b + li.offsets[j]) = op(i, j);
  return full;
}

DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<int>& keep) {
  const auto& shape = rho.shape;
  check_targets(shape, keep);
  auto traced = complement(shape, keep);
  auto ko = offsets_for(shape, keep);
  auto to = offsets_for(shape, traced);
  long n = static_cast<long>(ko.size());
  ComplexMatrix out = ComplexMatrix::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) {
      cplx acc = 0;
      for (long t : to) acc += rho.matrix(ko[i] + t, ko[j] + t);
      out(i, j) = acc;
    }
  SubsystemShape ks;
  for (int k : keep) ks.dims.push_back(shape.dims[k]);
  DensityMatrix r;
  r.matrix = std::move(out);
  r.shape = ks;
  r.normalized = rho.normalized;
  return r;
}

DensityMatrix project(const DensityMatrix& rho, const StateVector& ket,
                      const std::vector<int>& targets) {
  const auto& shape = rho.shape;
  check_targets(shape, targets);
  if (ket.size() != target_dim(shape, targets)) throw ValidationError("ket does not match targets");
  LocalIndex li(shape, targets);
  long n = static_cast<long>(li.bases.size());
  long td = ket.size();
  // Contract rows then columns: tmp = (<ket| x 1) rho, out = tmp (|ket> x 1).
  ComplexMatrix tmp = ComplexMatrix::Zero(n, rho.dim());
  for (long r = 0; r < n; ++r)
    for (long a = 0; a < td; ++a) {
      cplx c = std::conj(ket(a));
      if (c == cplx(0)) continue;
      tmp.row(r) += c * rho.matrix.row(li.bases[r] + li.offsets[a]);
    }
  ComplexMatrix out = ComplexMatrix::Zero(n, n);
  for (long s = 0; s < n; ++s)
    for (long b = 0; b < td; ++b) {
      if (ket(b) == cplx(0)) continue;
      out.col(s) += ket(b) * tmp.col(li.bases[s] + li.offsets[b]);
    }
  DensityMatrix r;
  r.matrix = std::move(out);
  r.shape = remove_subsystems(shape, targets);
  r.normalized = false;
  return r;
}

void conjugate_inplace(ComplexMatrix& rho, const SubsystemShape& shape, const ComplexMatrix& op,
                       const std::vector<int>& targets) {
  long td = target_dim(shape, targets);
  if (op.rows() != td || op.cols() != td) throw ValidationError("operator does not match targets");
  LocalIndex li(shape, targets);
  long n = rho.rows();
  StateVector buf(td), res(td);
  // Left multiplication on every column.
  for (long c = 0; c < n; ++c)
    for (long b : li.bases) {
      for (long a = 0; a < td; ++a) buf(a) = rho(b + li.offsets[a], c);
      res.noalias() = op * buf;
      for (long a = 0; a < td; ++a) rho(b + li.offsets[a], c) = res(a);
    }
  // Right multiplication by op^dagger on every row.
  ComplexMatrix opc = op.conjugate();
  for (long r = 0; r < n; ++r)
    for (long b : li.bases) {
      for (long a = 0; a < td; ++a) buf(a) = rho(r, b + li.offsets[a]);
      res.noalias() = opc * buf;
      for (long a = 0; a < td; ++a) rho(r, b + li.offsets[a]) = res(a);
    }
}

DensityMatrix conjugate(const DensityMatrix& rho, const ComplexMatrix& op,
                        const std::vector<int>& targets) {
  DensityMatrix r = rho;
  conjugate_inplace(r.matrix, r.shape, op, targets);
  return r;
}

StateVector apply(const StateVector& psi, const SubsystemShape& shape, const ComplexMatrix& op,
                  const std::vector<int>& targets) {
  long td = target_dim(shape, targets);
  if (op.rows() != td || op.cols() != td) throw ValidationError("operator does not match targets");
  if (psi.size() != shape.total()) throw ValidationError("state does not match shape");
  LocalIndex li(shape, targets);
  StateVector out(psi.size());
  StateVector buf(td);
  for (long b : li.bases) {
    for (long a = 0; a < td; ++a) buf(a) = psi(b + li.offsets[a]);
    StateVector res = op * buf;
    for (long a = 0; a < td; ++a) out(b + li.offsets[a]) = res(a);
  }
  return out;
}

StateVector project(const StateVector& psi, const SubsystemShape& shape, const StateVector& ket,
                    const std::vector<int>& targets) {
  if (ket.size() != target_dim(shape, targets)) throw ValidationError("ket does not match targets");
  LocalIndex li(shape, targets);
  StateVector out = StateVector::Zero(static_cast<long>(li.bases.size()));
  for (size_t r = 0; r < li.bases.size(); ++r) {
    cplx acc = 0;
    for (long a = 0; a < ket.size(); ++a) acc += std::conj(ket(a)) * psi(li.bases[r] + li.offsets[a]);
    out(static_cast<long>(r)) = acc;
  }
  return out;
}

double max_abs(const ComplexMatrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

bool is_unitary(const ComplexMatrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m.adjoint() * m - ComplexMatrix::Identity(m.rows(), m.cols())) < tol;
}

bool is_hermitian(const ComplexMatrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m - m.adjoint()) < tol;
}

ComplexMatrix psd_sqrt(const ComplexMatrix& m) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(0.5 * (m + m.adjoint()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
}

StateVector basis_state(long dim, long index) {
  StateVector v = StateVector::Zero(dim);
  v(index) = 1.0;
  return v;
}

StateVector basis_state(const SubsystemShape& shape, const std::vector<int>& digits) {
  if (static_cast<int>(digits.size()) != shape.size()) throw ValidationError("digit count mismatch");
  auto st = shape.strides();
  long idx = 0;
  for (int k = 0; k < shape.size(); ++k) idx += digits[k] * st[k];
  return basis_state(shape.total(), idx);
}

std::vector<int> digits_of(long index, const SubsystemShape& shape) {
  std::vector<int> d(shape.dims.size());
  for (int k = shape.size() - 1; k >= 0; --k) {
    d[k] = static_cast<int>(index % shape.dims[k]);
    index /= shape.dims[k];
  }
  return d;
}

std::vector<StateVector> complete_basis(const StateVector& first, double tol) {
  long n = first.size();
  if (first.norm() < tol) throw ValidationError("complete_basis: zero vector");
  std::vector<StateVector> basis{first.normalized()};
  for (long k = 0; k < n && static_cast<long>(basis.size()) < n; ++k) {
    StateVector v = basis_state(n, k);
    for (const auto& b : basis) v -= b.dot(v) * b;
    for (const auto& b : basis) v -= b.dot(v) * b;  // second pass for stability
    double nv = v.norm();
    if (nv > tol) basis.push_back(v / nv);
  }
  return basis;
}

StateVector max_entangled(int m) {
  long dm = 1L << m;
  StateVector v = StateVector::Zero(dm * dm);
  for (long k = 0; k < dm; ++k) v(k * dm + k) = 1.0;
  return v / std::sqrt(static_cast<double>(dm));
}

namespace gates {

ComplexMatrix I2() { return ComplexMatrix::Identity(2, 2); }

ComplexMatrix X() {
  ComplexMatrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

ComplexMatrix Y() {
  ComplexMatrix m(2, 2);
  m << 0, cplx(0, -1), cplx(0, 1), 0;
  return m;
}

ComplexMatrix Z() {
  ComplexMatrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

ComplexMatrix H() {
  ComplexMatrix m(2, 2);
  m << 1, 1, 1, -1;
  return m / std::sqrt(2.0);
}

ComplexMatrix S() {
  ComplexMatrix m(2, 2);
  m << 1, 0, 0, cplx(0, 1);
  return m;
}

ComplexMatrix T() {
  ComplexMatrix m(2, 2);
  m << 1, 0, 0, std::polar(1.0, M_PI / 4);
  return m;
}

ComplexMatrix Rx(double theta) {
  return std::cos(theta / 2) * I2() - cplx(0, 1) * std::sin(theta / 2) * X();
}

ComplexMatrix Rz(double theta) {
  ComplexMatrix m = ComplexMatrix::Zero(2, 2);
  m(0, 0) = std::polar(1.0, -theta / 2);
  m(1, 1) = std::polar(1.0, theta / 2);
  return m;
}

ComplexMatrix CNOT() {
  ComplexMatrix m = ComplexMatrix::Zero(4, 4);
  m(0, 0) = m(1, 1) = m(2, 3) = m(3, 2) = 1;
  return m;
}

ComplexMatrix CZ() {
  ComplexMatrix m = ComplexMatrix::Identity(4, 4);
  m(3, 3) = -1;
  return m;
}

ComplexMatrix SWAP() {
  ComplexMatrix m = ComplexMatrix::Zero(4, 4);
  m(0, 0) = m(1, 2) = m(2, 1) = m(3, 3) = 1;
  return m;
}

ComplexMatrix identity(long dim) { return ComplexMatrix::Identity(dim, dim); }

ComplexMatrix pauli_product(int index, int m) {
  static const ComplexMatrix single[4] = {I2(), Z(), X(), Y()};
  std::vector<ComplexMatrix> ops(m);
  for (int q = m - 1; q >= 0; --q) {
    ops[q] = single[index % 4];
    index /= 4;
  }
  return kron_all(ops);
}

}  // namespace gates

namespace states {

StateVector zero() { return basis_state(2, 0); }
StateVector one() { return basis_state(2, 1); }

StateVector plus() {
  StateVector v(2);
  v << 1, 1;
  return v / std::sqrt(2.0);
}

StateVector minus() {
  StateVector v(2);
  v << 1, -1;
  return v / std::sqrt(2.0);
}

StateVector right() {
  StateVector v(2);
  v << 1, cplx(0, 1);
  return v / std::sqrt(2.0);
}

StateVector left() {
  StateVector v(2);
  v << 1, cplx(0, -1);
  return v / std::sqrt(2.0);
}

StateVector tensor_power(const StateVector& s, int m) {
  return kron_all(std::vector<StateVector>(m, s));
}

}  // namespace states

}  // namespace sqem
