#include "sqem/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace sqem {

namespace {

constexpr double kZeroProbability = 1e-12;

// Returns the dominant eigenvector if the state is pure within tolerance.
bool pure_vector(const ComplexMatrix& rho, StateVector& v) {
  double tr = rho.trace().real();
  if ((rho * rho).trace().real() < (1 - kTol) * tr * tr) return false;
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(0.5 * (rho + rho.adjoint()));
  long k = es.eigenvalues().size() - 1;
  v = es.eigenvectors().col(k) * std::sqrt(std::max(es.eigenvalues()(k), 0.0) / tr);
  v.normalize();
  return true;
}

}  // namespace

double state_fidelity(const ComplexMatrix& rho, const ComplexMatrix& sigma) {
  if (rho.rows() != sigma.rows() || rho.cols() != sigma.cols())
    throw ValidationError("fidelity: dimension mismatch");
  StateVector v;
  if (pure_vector(sigma, v)) return std::clamp((v.adjoint() * rho * v)(0, 0).real(), 0.0, 1.0);
  if (pure_vector(rho, v)) return std::clamp((v.adjoint() * sigma * v)(0, 0).real(), 0.0, 1.0);
  ComplexMatrix sr = psd_sqrt(rho);
  ComplexMatrix inner = psd_sqrt(sr * sigma * sr);
  double f = inner.trace().real();
  return std::clamp(f * f, 0.0, 1.0);
}

double state_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  return state_fidelity(rho.matrix, sigma.matrix);
}

double cj_fidelity(const StateTransformer& protocol, const ComplexMatrix& u) {
  long d = u.rows();
  int m = 0;
  while ((1L << m) < d) ++m;
  if ((1L << m) != d) throw ValidationError("cj_fidelity: U must act on qubits");
  StateVector phi = max_entangled(m);
  ComplexMatrix out = protocol(phi * phi.adjoint());
  if (out.rows() != d * d) throw ValidationError("cj_fidelity: protocol output has wrong dimension");
  double tr = out.trace().real();
  if (!(tr > kZeroProbability) || tr > 1 + kTol || !is_hermitian(out, 1e-8))
    throw ValidationError("cj_fidelity: protocol output is not a valid state");
  StateVector target = kron(gates::identity(d), u) * phi;
  return (target.adjoint() * out * target)(0, 0).real() / tr;
}

Ratio infidelity_ratio(double f_incoherent, double f_coherent) {
  double num = 1 - f_incoherent;
  double den = 1 - f_coherent;
  if (den <= 0) {
    if (num <= 0) return {1.0, false};
    return {std::numeric_limits<double>::infinity(), true};
  }
  return {num / den, false};
}

FidelityReport make_report(double f_incoherent, double f_coherent, double success_probability) {
  FidelityReport r;
  r.f_incoherent = f_incoherent;
  r.f_coherent = f_coherent;
  r.success_probability = success_probability;
  auto q = infidelity_ratio(f_incoherent, f_coherent);
  r.ratio = q.value;
  r.ratio_infinite = q.infinite;
  return r;
}

std::pair<double, double> weighted_cj(const std::vector<std::pair<double, double>>& outcomes) {
  if (outcomes.empty()) throw ValidationError("weighted_cj: empty outcome list");
  double P = 0, PF = 0;
  for (auto [p, f] : outcomes) {
    if (p < -kTol) throw ValidationError("weighted_cj: negative probability");
    if (p < kZeroProbability) continue;
    P += p;
    PF += p * f;
  }
  if (P > 1 + kTol) throw ValidationError("weighted_cj: probabilities exceed one");
  return {P, P > 0 ? PF / P : 1.0};
}

}  // namespace sqem
