#include "sqem/ib.hpp"
#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>

using namespace sqem;

namespace {

IbConfig dephasing_t(int d, double p0) {
  IbConfig c;
  c.d = d;
  c.m = 1;
  c.u = gates::T();
  c.noise = dephasing(p0);
  c.vio = vio_dephasing(p0);
  return c;
}

// Explicit environments: branch i carries the noise environment, every other branch sits in its
// vacuum state sum_j c_j |j>. Control measured in the Fourier basis.
std::vector<ComplexMatrix> brute_force_phase_model(const KrausChannel& noise, const std::vector<std::complex<double>>& c,
                                                   const ComplexMatrix& u, int d, const StateVector& input) {
  int r = noise.rank();
  long dim = input.size();
  long sys = u.rows();
  ComplexMatrix lift = oracle::kron(oracle::eye(dim / sys), u);
  StateVector vac = StateVector::Zero(r);
  for (int j = 0; j < r; ++j) vac(j) = c[j];
  long env_dim = 1;
  for (int i = 0; i < d; ++i) env_dim *= r;
  std::vector<ComplexMatrix> out;
  for (int l = 0; l < d; ++l) {
    StateVector total = StateVector::Zero(dim * env_dim);
    for (int i = 0; i < d; ++i) {
      std::complex<double> amp = std::polar(1.0 / d, -2 * M_PI * i * l / d);
      for (int k = 0; k < r; ++k) {
        StateVector branch = oracle::kron(oracle::eye(dim / sys), noise.operators[k]) * lift * input;
        StateVector env = StateVector::Ones(1);
        for (int s = 0; s < d; ++s) {
          StateVector e = StateVector::Zero(r);
          if (s == i)
            e(k) = 1;
          else
            e = vac;
          env = oracle::kronv(env, e);
        }
        total += amp * oracle::kronv(branch, env);
      }
    }
    out.push_back(oracle::trace_out_right(total * total.adjoint(), env_dim));
  }
  return out;
}

}  // namespace

TEST(Ib, VioClosedForms) {
  EXPECT_NEAR(vio_dephasing(0.5).w.norm(), 0.0, 1e-15);
  EXPECT_NEAR(vio_dephasing(0.75).w(0, 0).real(), std::pow(0.5, 0.25), 1e-15);
  EXPECT_NEAR(vio_dephasing(0.75).w(0, 0).real(), 0.8409, 1e-4);
  EXPECT_NEAR(vio_depolarizing(0.25).w.norm(), 0.0, 1e-15);
  EXPECT_NEAR(vio_depolarizing(1.0).w(1, 1).real(), 1.0, 1e-15);
  EXPECT_THROW(vio_dephasing(0.4), ValidationError);
  EXPECT_THROW(vio_depolarizing(0.2), ValidationError);
  EXPECT_THROW(VacuumInterferenceOp(2.0 * gates::I2()), ValidationError);
  auto two = vio_tensor_power(vio_dephasing(0.9), 2);
  EXPECT_EQ(two.w.rows(), 4);
  EXPECT_NEAR(two.w(3, 3).real(), std::sqrt(0.8), 1e-14);
}

TEST(Ib, ClosedFormsMatchFieldModel) {
  for (double gt : {0.1, 0.7, 2.0}) {
    EXPECT_NEAR(vio_dephasing(field_p0(FieldKind::Dephasing, gt)).w(0, 0).real(), field_vio(FieldKind::Dephasing, gt),
                1e-12);
    EXPECT_NEAR(vio_depolarizing(field_p0(FieldKind::Depolarizing, gt)).w(0, 0).real(),
                field_vio(FieldKind::Depolarizing, gt), 1e-12);
  }
}

TEST(Ib, StochasticOracleDephasing) {
  auto est = stochastic_field_oracle(FieldKind::Dephasing, std::log(2.0), 40000, 11);
  EXPECT_EQ(est.steps, 694);
  EXPECT_NEAR(est.p0, 0.75, 4 * est.p0_error + 1e-3);
  EXPECT_NEAR(est.vio_scalar, std::pow(0.5, 0.25), 4 * est.vio_error + 1e-3);
  EXPECT_LT(est.p0_error, 0.01);
}

TEST(Ib, StochasticOracleDepolarizing) {
  auto est = stochastic_field_oracle(FieldKind::Depolarizing, 0.5, 20000, 5);
  EXPECT_NEAR(est.vio_scalar, std::exp(-0.375), 4 * est.vio_error + 1e-3);
  EXPECT_NEAR(est.p0, 0.25 * (1 + 3 * std::exp(-1.0)), 4 * est.p0_error + 1e-3);
  // Isotropic field: the averaged unitary has no Pauli part.
  EXPECT_LT(std::abs(est.vio(0, 1)), 0.02);
}

TEST(Ib, StochasticOracleDeterministicAcrossJobs) {
  auto a = stochastic_field_oracle(FieldKind::Depolarizing, 0.2, 9000, 3, 1);
  auto b = stochastic_field_oracle(FieldKind::Depolarizing, 0.2, 9000, 3, 3);
  EXPECT_EQ(a.p0, b.p0);
  EXPECT_EQ(a.vio_scalar, b.vio_scalar);
  auto c = stochastic_field_oracle(FieldKind::Depolarizing, 0.2, 9000, 4, 1);
  EXPECT_NE(a.p0, c.p0);
}

TEST(Ib, ZeroNoiseIsIdeal) {
  IbConfig c = dephasing_t(3, 1.0);
  auto outs = ib_output(c, max_entangled(1));
  EXPECT_NEAR(outs[0].probability, 1.0, 1e-14);
  EXPECT_NEAR(outs[0].fidelity, 1.0, 1e-14);
  for (int l = 1; l < 3; ++l) EXPECT_NEAR(outs[l].probability, 0.0, 1e-14);
}

TEST(Ib, ProbabilitiesSumToOne) {
  IbConfig c;
  c.d = 4;
  c.m = 2;
  c.u = gates::CNOT();
  c.noise = random_channel(2, 3, 8);
  c.vio = vio_from_phases(c.noise, {0.3, -1.1, 2.0});
  double total = 0;
  for (const auto& o : ib_output(c, max_entangled(2))) total += o.probability;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Ib, DephasingClosedForm) {
  // W = w 1 gives rho_0 = (E(rho) + (d - 1) w^2 rho) / d.
  for (int d : {2, 3, 7}) {
    for (double p0 : {0.8, 0.95}) {
      double w2 = std::sqrt(2 * p0 - 1);
      auto outs = ib_output(dephasing_t(d, p0), max_entangled(1));
      EXPECT_NEAR(outs[0].probability, (1 + (d - 1) * w2) / d, 1e-13);
      EXPECT_NEAR(outs[0].fidelity, (p0 + (d - 1) * w2) / (1 + (d - 1) * w2), 1e-13);
    }
  }
}

TEST(Ib, RatioApproachesD) {
  for (int d : {2, 5, 10}) {
    IbConfig c = dephasing_t(d, 0.999);
    auto r = run_ib(c, max_entangled(1));
    EXPECT_NEAR(r.report.f_incoherent, 0.999, 1e-12);
    EXPECT_NEAR(r.report.ratio, d, 0.01 * d);
    EXPECT_LT(r.report.ratio, d);
  }
}

TEST(Ib, NonzeroOutcomesShareFidelity) {
  auto outs = ib_output(dephasing_t(3, 0.9), max_entangled(1));
  EXPECT_NEAR(outs[1].fidelity, outs[2].fidelity, 1e-13);
  EXPECT_NEAR(outs[1].probability, outs[2].probability, 1e-13);
}

TEST(Ib, NoInterferenceAtHalf) {
  auto r = run_ib(dephasing_t(4, 0.5), max_entangled(1));
  EXPECT_NEAR(r.report.f_coherent, r.report.f_incoherent, 1e-13);
  EXPECT_NEAR(r.report.success_probability, 0.25, 1e-13);
}

TEST(Ib, PhaseModelMatchesBruteForce) {
  KrausChannel noise = random_channel(1, 3, 21);
  std::vector<double> phases{0.4, -0.9, 2.5};
  std::vector<double> q{0.5, 0.3, 0.2};
  std::vector<std::complex<double>> c;
  for (int j = 0; j < 3; ++j) c.push_back(std::polar(std::sqrt(q[j]), phases[j]));
  for (int d : {2, 3}) {
    IbConfig cfg;
    cfg.d = d;
    cfg.u = gates::H();
    cfg.noise = noise;
    cfg.vio = vio_from_phases(noise, phases, q);
    StateVector input = haar_state(4, 30 + d);
    auto outs = ib_output(cfg, input);
    auto ref = brute_force_phase_model(noise, c, gates::H(), d, input);
    for (int l = 0; l < d; ++l) EXPECT_LT(max_abs(outs[l].rho.matrix - ref[l]), 1e-12) << "d=" << d << " l=" << l;
  }
}

TEST(Ib, PerBranchVio) {
  IbConfig c = dephasing_t(3, 0.9);
  c.branch_vio = {vio_dephasing(0.9), vio_dephasing(0.9), vio_dephasing(0.9)};
  auto a = ib_output(c, max_entangled(1));
  auto b = ib_output(dephasing_t(3, 0.9), max_entangled(1));
  for (int l = 0; l < 3; ++l) EXPECT_LT(max_abs(a[l].rho.matrix - b[l].rho.matrix), 1e-15);
  c.branch_vio.pop_back();
  EXPECT_THROW(ib_output(c, max_entangled(1)), ValidationError);
}

TEST(Ib, BoundedByBellAuxiliaryGb) {
  for (int d : {2, 3}) {
    for (double p0 : {0.9, 0.97}) {
      IbConfig ib;
      ib.d = d;
      ib.u = gates::T();
      ib.noise = depolarizing(p0);
      ib.vio = vio_depolarizing(p0);
      auto ri = run_ib(ib, max_entangled(1));
      Bounds gb = depolarizing_bounds(d, 1, p0);
      double gb_ratio = (1 - p0) / (1 - gb.fidelity);
      EXPECT_LE(ri.report.ratio, gb_ratio + 1e-9) << d << " " << p0;
      EXPECT_GT(ri.report.ratio, 1.0);
    }
  }
}

TEST(Ib, SequenceOfOneMatchesSingleGate) {
  IbConfig c = dephasing_t(3, 0.9);
  auto single = ib_output(c, max_entangled(1));
  auto seq = ib_sequence({{c.u, c.noise, c.vio}}, 3, max_entangled(1));
  for (int l = 0; l < 3; ++l) EXPECT_LT(max_abs(single[l].rho.matrix - seq[l].rho.matrix), 1e-14);
}

TEST(Ib, SequenceWithoutInterference) {
  std::vector<IbGate> g{{gates::H(), depolarizing(0.9), vio_depolarizing(0.25)},
                        {gates::T(), dephasing(0.8), vio_dephasing(0.5)}};
  EXPECT_LT(max_abs(sequence_unitary(g) - gates::T() * gates::H()), 1e-15);
  auto outs = ib_sequence(g, 2, max_entangled(1));
  // Incoherent composite: lambda_00 of dephasing after depolarizing.
  double f0 = 0.9 * 0.8 + 0.1 / 3 * 0.2;
  EXPECT_NEAR(outs[0].fidelity, f0, 1e-13);
  EXPECT_NEAR(outs[0].probability + outs[1].probability, 1.0, 1e-13);
}

TEST(Ib, DeterministicMode) {
  IbConfig c = dephasing_t(2, 0.9);
  c.mode = IbMode::Deterministic;
  auto plain = run_ib(c, max_entangled(1));
  EXPECT_NEAR(plain.report.success_probability, 1.0, 1e-13);
  // Averaging over all outcomes without corrections reproduces the incoherent channel.
  EXPECT_NEAR(plain.report.f_coherent, plain.report.f_incoherent, 1e-13);
  c.correction_set = std::vector<ComplexMatrix>{};
  auto corrected = run_ib(c, max_entangled(1));
  EXPECT_GE(corrected.report.f_coherent, plain.report.f_coherent - 1e-13);
  EXPECT_TRUE(corrected.outcomes[1].correction.has_value());
}
