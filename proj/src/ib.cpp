#include "sqem/ib.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace sqem {

VacuumInterferenceOp::VacuumInterferenceOp(ComplexMatrix op) : w(std::move(op)) {
  if (w.rows() != w.cols() || w.rows() == 0) throw ValidationError("VIO must be a square matrix");
  if (spectral_norm() > 1 + 1e-9) throw ValidationError("VIO must be a contraction");
}

double VacuumInterferenceOp::spectral_norm() const {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(w.adjoint() * w, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
}

VacuumInterferenceOp vio_dephasing(double p0) {
  if (!(p0 >= 0.5 - 1e-15 && p0 <= 1 + 1e-15)) throw ValidationError("dephasing VIO needs p0 in [1/2, 1]");
  double x = std::max(2 * p0 - 1, 0.0);
  return VacuumInterferenceOp(std::pow(x, 0.25) * gates::I2());
}

VacuumInterferenceOp vio_depolarizing(double p0) {
  if (!(p0 >= 0.25 - 1e-15 && p0 <= 1 + 1e-15)) throw ValidationError("depolarizing VIO needs p0 in [1/4, 1]");
  double x = std::max((4 * p0 - 1) / 3, 0.0);
  return VacuumInterferenceOp(std::pow(x, 0.375) * gates::I2());
}

VacuumInterferenceOp vio_tensor(const std::vector<VacuumInterferenceOp>& parts) {
  if (parts.empty()) throw ValidationError("empty VIO list");
  ComplexMatrix w = ComplexMatrix::Identity(1, 1);
  for (const auto& p : parts) w = kron(w, p.w);
  return VacuumInterferenceOp(w);
}

VacuumInterferenceOp vio_tensor_power(const VacuumInterferenceOp& op, int m) {
  if (m < 1) throw ValidationError("vio_tensor_power needs m >= 1");
  return vio_tensor(std::vector<VacuumInterferenceOp>(m, op));
}

VacuumInterferenceOp vio_from_phases(const KrausChannel& noise, const std::vector<double>& phases,
                                     std::vector<double> weights) {
  int r = noise.rank();
  if (static_cast<int>(phases.size()) != r) throw ValidationError("one phase per Kraus operator required");
  if (weights.empty())
    for (const auto& k : noise.operators)
      weights.push_back((k.adjoint() * k).trace().real() / static_cast<double>(noise.dim()));
  if (static_cast<int>(weights.size()) != r) throw ValidationError("one weight per Kraus operator required");
  double total = 0;
  for (double q : weights) {
    if (q < 0) throw ValidationError("vacuum weights must be nonnegative");
    total += q;
  }
  if (std::abs(total - 1) > 1e-9) throw ValidationError("vacuum weights must sum to one");
  ComplexMatrix w = ComplexMatrix::Zero(noise.dim(), noise.dim());
  for (int j = 0; j < r; ++j) w += std::polar(std::sqrt(weights[j]), -phases[j]) * noise.operators[j];
  return VacuumInterferenceOp(w);
}

double field_p0(FieldKind kind, double gamma_t) {
  if (gamma_t < 0) throw ValidationError("gamma_t must be >= 0");
  return kind == FieldKind::Dephasing ? 0.5 * (1 + std::exp(-gamma_t)) : 0.25 * (1 + 3 * std::exp(-2 * gamma_t));
}

double field_vio(FieldKind kind, double gamma_t) {
  if (gamma_t < 0) throw ValidationError("gamma_t must be >= 0");
  return kind == FieldKind::Dephasing ? std::exp(-gamma_t / 4) : std::exp(-0.75 * gamma_t);
}

namespace {

constexpr double kMaxGammaDt = 1e-3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Sums over a block of trajectories of the unit quaternion (a0, a) with N = a0 1 - i a.sigma.
struct Partial {
  double s0 = 0, s00 = 0, sp = 0, spp = 0;
  double sv[3] = {0, 0, 0};
};

Partial run_block(FieldKind kind, double sigma, int steps, long begin, long end,
                  std::uint64_t seed) {
  Partial acc;
  for (long traj = begin; traj < end; ++traj) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(traj))));
    std::normal_distribution<double> g(0.0, sigma);
    double a0 = 1, a1 = 0, a2 = 0, a3 = 0;
    if (kind == FieldKind::Dephasing) {
      // Rotations about z commute, so the angles add.
      double theta = 0;
      for (int s = 0; s < steps; ++s) theta += g(rng);
      a0 = std::cos(theta);
      a3 = std::sin(theta);
    } else {
      for (int s = 0; s < steps; ++s) {
        double b1 = g(rng), b2 = g(rng), b3 = g(rng);
        double th = std::sqrt(b1 * b1 + b2 * b2 + b3 * b3);
        double c = std::cos(th), sn = th > 0 ? std::sin(th) / th : 1.0;
        b1 *= sn;
        b2 *= sn;
        b3 *= sn;
        // (c, b) * (a0, a): scalar c a0 - b.a, vector c a + a0 b + b x a.
        double n0 = c * a0 - (b1 * a1 + b2 * a2 + b3 * a3);
        double n1 = c * a1 + a0 * b1 + (b2 * a3 - b3 * a2);
        double n2 = c * a2 + a0 * b2 + (b3 * a1 - b1 * a3);
        double n3 = c * a3 + a0 * b3 + (b1 * a2 - b2 * a1);
        a0 = n0;
        a1 = n1;
        a2 = n2;
        a3 = n3;
      }
    }
    acc.s0 += a0;
    acc.s00 += a0 * a0;
    double p = a0 * a0;
    acc.sp += p;
    acc.spp += p * p;
    acc.sv[0] += a1;
    acc.sv[1] += a2;
    acc.sv[2] += a3;
  }
  return acc;
}

}  // namespace

StochasticEstimate stochastic_field_oracle(FieldKind kind, double gamma_t, long n_samples, std::uint64_t seed,
                                           int jobs) {
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (gamma_t < 0) throw ValidationError("gamma_t must be >= 0");
  StochasticEstimate est;
  est.vio = gates::I2();
  if (gamma_t == 0) return est;

  int steps = static_cast<int>(std::ceil(gamma_t / kMaxGammaDt - 1e-9));
  // Per step the rotation angle component is mu sqrt(dt) / 2 with mu ~ N(0, 2 Gamma), t = 1.
  double dt = 1.0 / steps;
  double sigma = std::sqrt(2 * gamma_t * dt) / 2;
  est.steps = steps;

  jobs = std::max(1, jobs);
  constexpr long kBlock = 4096;
  long nblocks = (n_samples + kBlock - 1) / kBlock;
  std::vector<Partial> parts(nblocks);
  auto worker = [&](int id) {
    for (long b = id; b < nblocks; b += jobs)
      parts[b] = run_block(kind, sigma, steps, b * kBlock, std::min(n_samples, (b + 1) * kBlock), seed);
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker, j);
    for (auto& t : pool) t.join();
  }
  Partial tot;
  for (const auto& p : parts) {
    tot.s0 += p.s0;
    tot.s00 += p.s00;
    tot.sp += p.sp;
    tot.spp += p.spp;
    for (int k = 0; k < 3; ++k) tot.sv[k] += p.sv[k];
  }
  double n = static_cast<double>(n_samples);
  est.vio_scalar = tot.s0 / n;
  est.vio_error = std::sqrt(std::max(tot.s00 / n - est.vio_scalar * est.vio_scalar, 0.0) / n);
  est.p0 = tot.sp / n;
  est.p0_error = std::sqrt(std::max(tot.spp / n - est.p0 * est.p0, 0.0) / n);
  const cplx im(0, 1);
  est.vio = est.vio_scalar * gates::I2() -
            im * (tot.sv[0] / n * gates::X() + tot.sv[1] / n * gates::Y() + tot.sv[2] / n * gates::Z());
  return est;
}

// ---------------------------------------------------------------------------------------------

void IbConfig::validate() const {
  if (d < 2) throw ValidationError("d must be >= 2");
  if (m < 1) throw ValidationError("m must be >= 1");
  long dm = 1L << m;
  if (u.rows() != dm || !is_unitary(u)) throw ValidationError("U must be a 2^m unitary");
  if (noise.operators.empty() || noise.dim() != dm) throw ValidationError("noise must act on m qubits");
  if (vio.w.rows() != dm) throw ValidationError("VIO dimension must be 2^m");
  if (!branch_vio.empty()) {
    if (static_cast<int>(branch_vio.size()) != d) throw ValidationError("branch_vio needs d entries");
    for (const auto& b : branch_vio)
      if (b.w.rows() != dm) throw ValidationError("VIO dimension must be 2^m");
  }
  if (correction_set)
    for (const auto& c : *correction_set)
      if (c.rows() != dm || !is_unitary(c)) throw ValidationError("corrections must be 2^m unitaries");
}

const ComplexMatrix& IbConfig::w_at(int branch) const { return branch_vio.empty() ? vio.w : branch_vio[branch].w; }

namespace {

int log2_exact(long n) {
  int k = 0;
  while ((1L << k) < n) ++k;
  if ((1L << k) != n) throw ValidationError("dimension is not a power of two");
  return k;
}

// Outcome l: (1/d^2) [d * diag + sum_{i != j} w^{-(i-j) l} A_i rho A_j^dagger].
std::vector<ProtocolOutcome> interfere(int d, const ComplexMatrix& diag, const std::vector<ComplexMatrix>& A,
                                       const ComplexMatrix& rho, const StateVector& target, int total_qubits) {
  ComplexMatrix self = ComplexMatrix::Zero(rho.rows(), rho.cols());
  for (const auto& a : A) self += a * rho * a.adjoint();
  std::vector<ProtocolOutcome> out;
  auto shape = SubsystemShape::qubits(total_qubits);
  for (int l = 0; l < d; ++l) {
    ComplexMatrix M = ComplexMatrix::Zero(A[0].rows(), A[0].cols());
    for (int i = 0; i < d; ++i) M += std::polar(1.0, -2 * M_PI * i * l / d) * A[i];
    ComplexMatrix r = (d * diag + M * rho * M.adjoint() - self) / static_cast<double>(d * d);
    ProtocolOutcome o;
    o.control_outcome = l;
    o.rho = DensityMatrix(std::move(r), shape, false);
    o.probability = o.rho.trace();
    o.fidelity = o.probability < kZeroOutcome ? 1.0 : (target.adjoint() * o.rho.matrix * target)(0, 0).real() / o.probability;
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace

std::vector<ProtocolOutcome> ib_output(const IbConfig& config, const StateVector& input) {
  config.validate();
  int R = log2_exact(input.size()) - config.m;
  if (R < 0) throw ValidationError("input smaller than the register");
  if (std::abs(input.norm() - 1) > kTol) throw ValidationError("input must be normalized");
  auto shape = SubsystemShape::qubits(R + config.m);
  std::vector<int> sys(config.m);
  for (int q = 0; q < config.m; ++q) sys[q] = R + q;
  ComplexMatrix idR = gates::identity(1L << R);
  StateVector t = kron(idR, config.u) * input;
  DensityMatrix rho_f = DensityMatrix::pure(t, shape);
  ComplexMatrix diag = apply(config.noise, rho_f, sys).matrix;
  std::vector<ComplexMatrix> A;
  for (int i = 0; i < config.d; ++i) A.push_back(kron(idR, config.w_at(i)));
  return interfere(config.d, diag, A, rho_f.matrix, t, R + config.m);
}

ComplexMatrix sequence_unitary(const std::vector<IbGate>& gates) {
  if (gates.empty()) throw ValidationError("empty gate sequence");
  ComplexMatrix u = ComplexMatrix::Identity(gates[0].u.rows(), gates[0].u.cols());
  for (const auto& g : gates) u = g.u * u;
  return u;
}

std::vector<ProtocolOutcome> ib_sequence(const std::vector<IbGate>& gates, int d, const StateVector& input) {
  if (d < 2) throw ValidationError("d must be >= 2");
  ComplexMatrix ut = sequence_unitary(gates);
  long dm = ut.rows();
  for (const auto& g : gates)
    if (g.u.rows() != dm || g.noise.dim() != dm || g.vio.w.rows() != dm || !is_unitary(g.u))
      throw ValidationError("inconsistent gate dimensions in sequence");
  int m = log2_exact(dm);
  int R = log2_exact(input.size()) - m;
  if (R < 0) throw ValidationError("input smaller than the register");
  auto shape = SubsystemShape::qubits(R + m);
  std::vector<int> sys(m);
  for (int q = 0; q < m; ++q) sys[q] = R + q;
  ComplexMatrix idR = gates::identity(1L << R);
  DensityMatrix rho_in = DensityMatrix::pure(input, shape);
  DensityMatrix diag = rho_in;
  ComplexMatrix a = ComplexMatrix::Identity(dm, dm);
  for (const auto& g : gates) {
    diag = apply(g.noise, conjugate(diag, g.u, sys), sys);
    a = g.vio.w * g.u * a;
  }
  StateVector t = kron(idR, ut) * input;
  // Identical, independent branches: A_i = W_n U_n ... W_1 U_1 for every i.
  std::vector<ComplexMatrix> A(d, kron(idR, a));
  return interfere(d, diag.matrix, A, rho_in.matrix, t, R + m);
}

IbResult run_ib(const IbConfig& config, const StateVector& input) {
  IbResult res;
  res.outcomes = ib_output(config, input);
  int R = log2_exact(input.size()) - config.m;
  StateVector t = kron(gates::identity(1L << R), config.u) * input;
  auto shape = SubsystemShape::qubits(R + config.m);
  std::vector<int> sys(config.m);
  for (int q = 0; q < config.m; ++q) sys[q] = R + q;
  double f0 = (t.adjoint() * apply(config.noise, DensityMatrix::pure(t, shape), sys).matrix * t)(0, 0).real();
  if (config.mode == IbMode::Probabilistic) {
    auto& o = res.outcomes.front();
    res.report = make_report(f0, o.fidelity, o.probability);
    return res;
  }
  if (config.correction_set) {
    auto set = config.correction_set->empty() ? clifford_corrections(config.m) : *config.correction_set;
    choose_corrections(res.outcomes, t, set, R);
  }
  std::vector<std::pair<double, double>> pf;
  for (const auto& o : res.outcomes) pf.push_back({o.probability, o.fidelity});
  auto [P, F] = weighted_cj(pf);
  res.report = make_report(f0, F, P);
  return res;
}

}  // namespace sqem
