#include "sqem/qmath.hpp"
#include "sqem/channels.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

using namespace sqem;

namespace {

ComplexMatrix random_density(long dim, std::uint64_t seed) {
  ComplexMatrix a = haar_unitary(dim, seed).leftCols(std::max<long>(1, dim / 2));
  ComplexMatrix rho = a * a.adjoint();
  return rho / rho.trace();
}

}  // namespace

TEST(Qmath, KronMatchesOracle) {
  ComplexMatrix a = haar_unitary(2, 1), b = haar_unitary(4, 2);
  EXPECT_LT(max_abs(kron(a, b) - oracle::kron(a, b)), 1e-14);
  ComplexMatrix c = haar_unitary(3, 3);
  EXPECT_LT(max_abs(kron_all(std::vector<ComplexMatrix>{a, b, c}) - oracle::kron(oracle::kron(a, b), c)), 1e-14);
}

TEST(Qmath, ShapeStrides) {
  SubsystemShape s({2, 3, 4});
  EXPECT_EQ(s.total(), 24);
  EXPECT_EQ(s.strides(), (std::vector<long>{12, 4, 1}));
  EXPECT_EQ(digits_of(17, s), (std::vector<int>{1, 1, 1}));
  EXPECT_THROW(SubsystemShape({2, 0}), ValidationError);
}

TEST(Qmath, EmbedAndConjugateAgree) {
  SubsystemShape s({2, 3, 2});
  ComplexMatrix op = haar_unitary(4, 7);
  ComplexMatrix rho = random_density(12, 8);
  ComplexMatrix full = embed(op, {2, 0}, s);
  DensityMatrix dm(rho, s);
  DensityMatrix out = conjugate(dm, op, {2, 0});
  EXPECT_LT(max_abs(out.matrix - full * rho * full.adjoint()), 1e-12);

  // op acts with target 2 as its most significant factor.
  ComplexMatrix manual = ComplexMatrix::Zero(12, 12);
  for (int x = 0; x < 12; ++x)
    for (int y = 0; y < 12; ++y) {
      int xa = x / 6, xb = (x / 2) % 3, xc = x % 2;
      int ya = y / 6, yb = (y / 2) % 3, yc = y % 2;
      if (xb != yb) continue;
      manual(x, y) = op(xc * 2 + xa, yc * 2 + ya);
    }
  EXPECT_LT(max_abs(full - manual), 1e-14);
}

TEST(Qmath, PartialTraceMatchesOracle) {
  ComplexMatrix rho = random_density(8, 11);
  DensityMatrix dm(rho, SubsystemShape::qubits(3));
  DensityMatrix r = partial_trace(dm, {0, 1});
  EXPECT_LT(max_abs(r.matrix - oracle::trace_out_right(rho, 2)), 1e-14);
  EXPECT_EQ(r.shape.dims, (std::vector<int>{2, 2}));
}

TEST(Qmath, ProjectMatchesOracle) {
  ComplexMatrix rho = random_density(8, 12);
  StateVector ket = haar_state(2, 13);
  DensityMatrix dm(rho, SubsystemShape::qubits(3));
  DensityMatrix p = project(dm, ket, {2});
  ComplexMatrix bra = oracle::kron(oracle::eye(4), ComplexMatrix(ket.adjoint()));
  EXPECT_LT(max_abs(p.matrix - bra * rho * bra.adjoint()), 1e-14);
  EXPECT_FALSE(p.normalized);
}

TEST(Qmath, PureProjectMatchesDensityProject) {
  StateVector psi = haar_state(12, 21);
  SubsystemShape s({3, 2, 2});
  StateVector ket = haar_state(2, 22);
  StateVector v = project(psi, s, ket, {1});
  DensityMatrix p = project(DensityMatrix::pure(psi, s), ket, {1});
  EXPECT_LT(max_abs(v * v.adjoint() - p.matrix), 1e-14);
}

TEST(Qmath, ApplyStateMatchesEmbed) {
  SubsystemShape s = SubsystemShape::qubits(3);
  StateVector psi = haar_state(8, 31);
  ComplexMatrix op = haar_unitary(4, 32);
  EXPECT_LT(max_abs(apply(psi, s, op, {1, 2}) - embed(op, {1, 2}, s) * psi), 1e-14);
}

TEST(Qmath, CompleteBasis) {
  StateVector first = haar_state(4, 41);
  auto basis = complete_basis(first);
  ASSERT_EQ(basis.size(), 4u);
  EXPECT_LT((basis[0] - first).norm(), 1e-14);
  for (size_t i = 0; i < basis.size(); ++i)
    for (size_t j = 0; j < basis.size(); ++j)
      EXPECT_NEAR(std::abs(basis[i].dot(basis[j])), i == j ? 1.0 : 0.0, 1e-12);
  EXPECT_THROW(complete_basis(StateVector::Zero(2)), ValidationError);
}

TEST(Qmath, MaxEntangledOrdering) {
  StateVector phi = max_entangled(2);
  // ref qubits (r1, r2) then system (s1, s2); amplitude 1/2 when r = s.
  for (long x = 0; x < 16; ++x) {
    long r = x >> 2, s = x & 3;
    EXPECT_NEAR(std::abs(phi(x)), r == s ? 0.5 : 0.0, 1e-15);
  }
}

TEST(Qmath, GatesAndPaulis) {
  EXPECT_TRUE(is_unitary(gates::CNOT()));
  EXPECT_LT(max_abs(gates::T() * gates::T() - gates::S()), 1e-15);
  EXPECT_LT(max_abs(gates::pauli_product(1, 1) - gates::Z()), 1e-15);
  EXPECT_LT(max_abs(gates::pauli_product(2, 1) - gates::X()), 1e-15);
  EXPECT_LT(max_abs(gates::pauli_product(3, 1) - gates::Y()), 1e-15);
  EXPECT_LT(max_abs(gates::pauli_product(6, 2) - oracle::kron(gates::Z(), gates::X())), 1e-15);
  StateVector out = gates::CNOT() * kron(states::one(), states::zero());
  EXPECT_NEAR(std::abs(out(3)), 1.0, 1e-15);
}

TEST(Qmath, DensityValidation) {
  ComplexMatrix bad = ComplexMatrix::Identity(2, 2);
  EXPECT_THROW(DensityMatrix(bad, SubsystemShape::qubits(1)).validate(), ValidationError);
  EXPECT_THROW(DensityMatrix(bad, SubsystemShape::qubits(2)), ValidationError);
  DensityMatrix ok(bad / 2.0, SubsystemShape::qubits(1));
  EXPECT_NO_THROW(ok.validate());
}

TEST(Qmath, PsdSqrt) {
  ComplexMatrix rho = random_density(4, 51);
  ComplexMatrix r = psd_sqrt(rho);
  EXPECT_LT(max_abs(r * r - rho), 1e-12);
}
