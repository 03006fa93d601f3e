#include "sqem/channels.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sqem;

TEST(Channels, DephasingOnPlus) {
  // Off-diagonal coherence shrinks by 2 p0 - 1.
  DensityMatrix plus = DensityMatrix::pure(states::plus(), SubsystemShape::qubits(1));
  DensityMatrix out = sqem::apply(dephasing(0.97), plus, {0});
  EXPECT_NEAR(out.matrix(0, 0).real(), 0.5, 1e-15);
  EXPECT_NEAR(out.matrix(0, 1).real(), 0.5 * (2 * 0.97 - 1), 1e-15);
}

TEST(Channels, DepolarizingBlochShrink) {
  double p0 = 0.9;
  StateVector psi = haar_state(2, 3);
  ComplexMatrix rho = psi * psi.adjoint();
  ComplexMatrix out = sqem::apply(depolarizing(p0), rho);
  // Bloch vector shrinks by (4 p0 - 1) / 3.
  double s = (4 * p0 - 1) / 3;
  ComplexMatrix expected = s * rho + (1 - s) * ComplexMatrix::Identity(2, 2) / 2.0;
  EXPECT_LT(max_abs(out - expected), 1e-14);
}

TEST(Channels, IdentityAtPerfectFidelity) {
  EXPECT_EQ(dephasing(1.0).rank(), 1);
  EXPECT_EQ(depolarizing(1.0).rank(), 1);
  EXPECT_THROW(dephasing(1.5), ValidationError);
  EXPECT_THROW(depolarizing(-0.1), ValidationError);
}

TEST(Channels, IncompleteKrausRejected) {
  EXPECT_THROW(KrausChannel({0.5 * gates::I2()}), ValidationError);
  EXPECT_THROW(KrausChannel({gates::I2(), ComplexMatrix::Identity(4, 4)}), ValidationError);
}

TEST(Channels, ChiOfDepolarizing) {
  ProcessMatrix chi = kraus_to_chi(depolarizing(0.9));
  EXPECT_NEAR(chi.lambda(0, 0).real(), 0.9, 1e-15);
  for (int a = 1; a < 4; ++a) EXPECT_NEAR(chi.lambda(a, a).real(), 0.1 / 3, 1e-15);
  EXPECT_NEAR(chi.p_ne(), 0.9, 1e-15);
  EXPECT_NO_THROW(chi.validate());
}

TEST(Channels, ChiKrausRoundTrip) {
  for (int rank = 1; rank <= 4; ++rank) {
    KrausChannel ch = random_channel(1, rank, 100 + rank);
    ProcessMatrix chi = kraus_to_chi(ch);
    EXPECT_NO_THROW(chi.validate(1e-10));
    KrausChannel back = chi_to_kraus(chi);
    EXPECT_LE(back.rank(), rank);
    ComplexMatrix rho = haar_state(2, 7) * haar_state(2, 7).adjoint();
    EXPECT_LT(max_abs(sqem::apply(ch, rho) - sqem::apply(back, rho)), 1e-12);
    // Direct chi action: sum lambda_ab sigma_a rho sigma_b^dagger.
    const auto& P = pauli_basis(1);
    ComplexMatrix direct = ComplexMatrix::Zero(2, 2);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) direct += chi.lambda(a, b) * P[a] * rho * P[b].adjoint();
    EXPECT_LT(max_abs(direct - sqem::apply(ch, rho)), 1e-12);
  }
}

TEST(Channels, NegativeChiRejected) {
  ComplexMatrix l = ComplexMatrix::Zero(4, 4);
  l(0, 0) = 1.2;
  l(1, 1) = -0.2;
  EXPECT_THROW(chi_to_kraus(ProcessMatrix(1, l)), ValidationError);
  EXPECT_THROW(ProcessMatrix(1, l).validate(), ValidationError);
}

TEST(Channels, CanonicalizeKeepsAction) {
  KrausChannel ch = compose(depolarizing(0.8), dephasing(0.7));
  KrausChannel c = canonicalize(ch);
  EXPECT_LE(c.rank(), 4);
  EXPECT_TRUE(c.is_complete(1e-12));
  ComplexMatrix rho = haar_state(2, 9) * haar_state(2, 9).adjoint();
  EXPECT_LT(max_abs(sqem::apply(ch, rho) - sqem::apply(c, rho)), 1e-12);
  for (int i = 0; i < c.rank(); ++i)
    for (int j = 0; j < c.rank(); ++j)
      if (i != j) EXPECT_NEAR(std::abs((c.operators[i].adjoint() * c.operators[j]).trace()), 0.0, 1e-12);
}

TEST(Channels, ComposeOrder) {
  KrausChannel a = KrausChannel::unitary(gates::H());
  KrausChannel b = KrausChannel::unitary(gates::S());
  KrausChannel ab = compose(a, b);
  EXPECT_LT(max_abs(ab.operators[0] - gates::S() * gates::H()), 1e-15);
}

TEST(Channels, StinespringIsometry) {
  KrausChannel ch = random_channel(2, 3, 17);
  ComplexMatrix V = stinespring(ch);
  EXPECT_LT(max_abs(V.adjoint() * V - ComplexMatrix::Identity(4, 4)), 1e-12);
  // Tracing the environment from V rho V^dagger reproduces the channel.
  ComplexMatrix rho = haar_state(4, 18) * haar_state(4, 18).adjoint();
  EXPECT_LT(max_abs(oracle::trace_out_right(V * rho * V.adjoint(), 3) - sqem::apply(ch, rho)), 1e-12);
}

TEST(Channels, TensorChannelMatchesProduct) {
  KrausChannel two = tensor_channel(dephasing(0.9), 2);
  EXPECT_EQ(two.rank(), 4);
  EXPECT_TRUE(two.is_complete());
  ComplexMatrix rho = haar_state(4, 5) * haar_state(4, 5).adjoint();
  DensityMatrix dm(rho, SubsystemShape::qubits(2));
  DensityMatrix seq = sqem::apply(dephasing(0.9), sqem::apply(dephasing(0.9), dm, {0}), {1});
  EXPECT_LT(max_abs(sqem::apply(two, rho) - seq.matrix), 1e-14);
}

TEST(Channels, RandomChannelsAreDeterministic) {
  KrausChannel a = random_channel(1, 3, 42), b = random_channel(1, 3, 42);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(max_abs(a.operators[k] - b.operators[k]), 0.0);
  EXPECT_TRUE(is_unitary(haar_unitary(4, 1)));
  EXPECT_NEAR(haar_state(8, 2).norm(), 1.0, 1e-14);
  EXPECT_THROW(random_channel(1, 5, 0), ValidationError);
}
