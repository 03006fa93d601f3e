#include "sqem/channels.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <map>
#include <mutex>
#include <random>

namespace sqem {

KrausChannel::KrausChannel(std::vector<ComplexMatrix> ops, bool check) : operators(std::move(ops)) {
  if (operators.empty()) throw ValidationError("channel needs at least one Kraus operator");
  long d = operators.front().rows();
  for (const auto& k : operators)
    if (k.rows() != d || k.cols() != d) throw ValidationError("Kraus operators must be square and equal size");
  if (check && !is_complete()) throw ValidationError("Kraus operators violate completeness");
}

bool KrausChannel::is_complete(double tol) const {
  ComplexMatrix s = ComplexMatrix::Zero(dim(), dim());
  for (const auto& k : operators) s += k.adjoint() * k;
  return max_abs(s - ComplexMatrix::Identity(dim(), dim())) < tol;
}

KrausChannel KrausChannel::identity(long dim) { return KrausChannel({ComplexMatrix::Identity(dim, dim)}); }

KrausChannel KrausChannel::unitary(const ComplexMatrix& u) {
  if (!is_unitary(u)) throw ValidationError("operator is not unitary");
  return KrausChannel({u});
}

ProcessMatrix::ProcessMatrix(int qubits, ComplexMatrix l) : m(qubits), lambda(std::move(l)) {
  long n = 1L << (2 * m);
  if (lambda.rows() != n || lambda.cols() != n) throw ValidationError("chi matrix must be 4^m x 4^m");
}

bool ProcessMatrix::trace_preserving(double tol) const {
  const auto& P = pauli_basis(m);
  long d = 1L << m;
  ComplexMatrix s = ComplexMatrix::Zero(d, d);
  for (long i = 0; i < lambda.rows(); ++i)
    for (long j = 0; j < lambda.cols(); ++j)
      if (lambda(i, j) != cplx(0)) s += lambda(i, j) * P[j].adjoint() * P[i];
  return max_abs(s - ComplexMatrix::Identity(d, d)) < tol;
}

void ProcessMatrix::validate(double tol, bool require_trace_preserving) const {
  if (!is_hermitian(lambda, tol)) throw ValidationError("chi not Hermitian");
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(lambda, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol) throw ValidationError("chi not positive semidefinite");
  if (require_trace_preserving && !trace_preserving(tol)) throw ValidationError("chi not trace preserving");
  for (long i = 0; i < lambda.rows(); ++i)
    for (long j = 0; j < lambda.cols(); ++j)
      if (std::norm(lambda(i, j)) > lambda(i, i).real() * lambda(j, j).real() + tol)
        throw ValidationError("chi violates Cauchy-Schwarz");
}

namespace {

void check_probability(double p0, double lo = 0.0) {
  if (!(p0 >= lo - 1e-15 && p0 <= 1.0 + 1e-15)) throw ValidationError("p0 out of range");
}

}  // namespace

KrausChannel dephasing(double p0) {
  check_probability(p0);
  p0 = std::clamp(p0, 0.0, 1.0);
  if (p0 == 1.0) return KrausChannel::identity(2);
  return KrausChannel({std::sqrt(p0) * gates::I2(), std::sqrt(1 - p0) * gates::Z()});
}

KrausChannel depolarizing(double p0) {
  check_probability(p0);
  p0 = std::clamp(p0, 0.0, 1.0);
  if (p0 == 1.0) return KrausChannel::identity(2);
  double q = std::sqrt((1 - p0) / 3);
  return KrausChannel({std::sqrt(p0) * gates::I2(), q * gates::X(), q * gates::Y(), q * gates::Z()});
}

KrausChannel tensor_product(const std::vector<KrausChannel>& chs) {
  if (chs.empty()) throw ValidationError("empty channel list");
  std::vector<ComplexMatrix> ops{ComplexMatrix::Identity(1, 1)};
  for (const auto& ch : chs) {
    std::vector<ComplexMatrix> next;
    next.reserve(ops.size() * ch.operators.size());
    for (const auto& a : ops)
      for (const auto& b : ch.operators) next.push_back(kron(a, b));
    ops = std::move(next);
  }
  return KrausChannel(std::move(ops), false);
}

KrausChannel tensor_channel(const KrausChannel& ch, int m) {
  if (m < 1) throw ValidationError("tensor_channel needs m >= 1");
  return tensor_product(std::vector<KrausChannel>(m, ch));
}

ComplexMatrix apply(const KrausChannel& ch, const ComplexMatrix& rho) {
  if (rho.rows() != ch.dim()) throw ValidationError("channel dimension mismatch");
  ComplexMatrix out = ComplexMatrix::Zero(rho.rows(), rho.cols());
  for (const auto& k : ch.operators) out.noalias() += k * rho * k.adjoint();
  return out;
}

DensityMatrix apply(const KrausChannel& ch, const DensityMatrix& rho, const std::vector<int>& targets) {
  long td = 1;
  for (int t : targets) {
    if (t < 0 || t >= rho.shape.size()) throw ValidationError("subsystem index out of range");
    td *= rho.shape.dims[t];
  }
  if (td != ch.dim()) throw ValidationError("channel dimension does not match targets");
  if (ch.rank() == 1) return conjugate(rho, ch.operators[0], targets);
  DensityMatrix out = rho;
  out.matrix.setZero();
  for (const auto& k : ch.operators) out.matrix += conjugate(rho, k, targets).matrix;
  return out;
}

const std::vector<ComplexMatrix>& pauli_basis(int m) {
  static std::mutex mu;
  static std::map<int, std::vector<ComplexMatrix>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  std::vector<ComplexMatrix> basis;
  for (int a = 0; a < (1 << (2 * m)); ++a) basis.push_back(gates::pauli_product(a, m));
  return cache.emplace(m, std::move(basis)).first->second;
}

namespace {

int qubit_count(long dim) {
  int m = 0;
  while ((1L << m) < dim) ++m;
  if ((1L << m) != dim) throw ValidationError("channel does not act on qubits");
  return m;
}

}  // namespace

ProcessMatrix kraus_to_chi(const KrausChannel& ch) {
  int m = qubit_count(ch.dim());
  const auto& P = pauli_basis(m);
  long n = static_cast<long>(P.size());
  double scale = 1.0 / static_cast<double>(ch.dim());
  // alpha(j, a) = Tr(sigma_a^dagger K_j) / 2^m, lambda = alpha^T conj(alpha)
  ComplexMatrix alpha(ch.rank(), n);
  for (int j = 0; j < ch.rank(); ++j)
    for (long a = 0; a < n; ++a) alpha(j, a) = (P[a].adjoint() * ch.operators[j]).trace() * scale;
  return ProcessMatrix(m, alpha.transpose() * alpha.conjugate());
}

KrausChannel chi_to_kraus(const ProcessMatrix& chi) {
  if (!is_hermitian(chi.lambda)) throw ValidationError("chi not Hermitian");
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(0.5 * (chi.lambda + chi.lambda.adjoint()));
  const auto& P = pauli_basis(chi.m);
  std::vector<ComplexMatrix> ops;
  for (long k = es.eigenvalues().size() - 1; k >= 0; --k) {
    double ev = es.eigenvalues()(k);
    if (ev < -kTol) throw ValidationError("chi has a negative eigenvalue");
    if (ev <= kTol * 1e-3) continue;
    ComplexMatrix K = ComplexMatrix::Zero(1L << chi.m, 1L << chi.m);
    for (long a = 0; a < es.eigenvectors().rows(); ++a) K += es.eigenvectors()(a, k) * P[a];
    ops.push_back(std::sqrt(ev) * K);
  }
  if (ops.empty()) throw ValidationError("chi is zero");
  return KrausChannel(std::move(ops), false);
}

KrausChannel canonicalize(const KrausChannel& ch) {
  // Gram matrix route works for any dimension: K_j -> sum_i U_ij K_i from eig of G_ij = Tr(K_i^dag K_j).
  int r = ch.rank();
  ComplexMatrix G(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) G(i, j) = (ch.operators[i].adjoint() * ch.operators[j]).trace();
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(0.5 * (G + G.adjoint()));
  double top = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  std::vector<ComplexMatrix> ops;
  for (int k = r - 1; k >= 0; --k) {
    if (es.eigenvalues()(k) <= top * 1e-14) continue;
    ComplexMatrix K = ComplexMatrix::Zero(ch.dim(), ch.dim());
    for (int i = 0; i < r; ++i) K += es.eigenvectors()(i, k) * ch.operators[i];
    ops.push_back(std::move(K));
  }
  return KrausChannel(std::move(ops), false);
}

ComplexMatrix stinespring(const KrausChannel& ch) {
  long d = ch.dim();
  long r = ch.rank();
  ComplexMatrix V = ComplexMatrix::Zero(d * r, d);
  for (long j = 0; j < r; ++j)
    for (long s = 0; s < d; ++s)
      for (long c = 0; c < d; ++c) V(s * r + j, c) = ch.operators[j](s, c);
  return V;
}

KrausChannel compose(const KrausChannel& first, const KrausChannel& second) {
  if (first.dim() != second.dim()) throw ValidationError("channel dimensions differ");
  std::vector<ComplexMatrix> ops;
  ops.reserve(first.operators.size() * second.operators.size());
  for (const auto& b : second.operators)
    for (const auto& a : first.operators) ops.push_back(b * a);
  return KrausChannel(std::move(ops), false);
}

namespace {

ComplexMatrix gaussian_matrix(long rows, long cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexMatrix g(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) g(i, j) = cplx(n(rng), n(rng));
  return g;
}

// Q factor with the phase convention that makes the distribution Haar.
ComplexMatrix haar_q(const ComplexMatrix& g) {
  Eigen::HouseholderQR<ComplexMatrix> qr(g);
  ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(g.rows(), g.cols());
  ComplexMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (long k = 0; k < g.cols(); ++k) {
    cplx dk = r(k, k);
    if (std::abs(dk) > 0) q.col(k) *= dk / std::abs(dk);
  }
  return q;
}

}  // namespace

ComplexMatrix haar_unitary(long dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return haar_q(gaussian_matrix(dim, dim, rng));
}

StateVector haar_state(long dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  StateVector v = gaussian_matrix(dim, 1, rng).col(0);
  return v.normalized();
}

KrausChannel random_channel(int m, int rank, std::uint64_t seed) {
  long d = 1L << m;
  if (rank < 1 || rank > d * d) throw ValidationError("rank must be in [1, 4^m]");
  std::mt19937_64 rng(seed);
  // Isometry d -> d*rank; rows grouped as (system s, environment j).
  ComplexMatrix V = haar_q(gaussian_matrix(d * rank, d, rng));
  std::vector<ComplexMatrix> ops(rank, ComplexMatrix::Zero(d, d));
  for (int j = 0; j < rank; ++j)
    for (long s = 0; s < d; ++s) ops[j].row(s) = V.row(s * rank + j);
  return KrausChannel(std::move(ops));
}

}  // namespace sqem
