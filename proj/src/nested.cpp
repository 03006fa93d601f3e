#include "sqem/nested.hpp"

#include <cmath>

namespace sqem {

void NestedPlan::validate(int m) const {
  if (n < 1) throw ValidationError("nested plan needs n >= 1");
  if (static_cast<int>(d_seq.size()) != n || static_cast<int>(aux_seq.size()) != n)
    throw ValidationError("d_seq and aux_seq must have length n");
  if (aux_ext < 0) throw ValidationError("aux_ext must be >= 0");
  long dm = 1L << m;
  if (u.rows() != dm || !is_unitary(u)) throw ValidationError("nested plan: U must be a 2^m unitary");
  for (int d : d_seq)
    if (d < 2) throw ValidationError("nested plan: branch counts must be >= 2");
  for (const auto& a : aux_seq)
    if (a.size() != (dm << aux_ext) || std::abs(a.norm() - 1) > kTol)
      throw ValidationError("nested plan: auxiliary states must be normalized register states");
}

NestedResult nested_chi(const ProcessMatrix& chi0, const NestedPlan& plan) {
  plan.validate(chi0.m);
  const auto& P = pauli_basis(chi0.m);
  long np = static_cast<long>(P.size());
  ComplexMatrix idE = gates::identity(1L << plan.aux_ext);

  NestedResult res;
  ComplexMatrix L = chi0.lambda;
  for (int k = 0; k < plan.n; ++k) {
    const StateVector& phi = plan.aux_seq[k];
    int d = plan.d_seq[k];
    // s_a = <phi| U^dagger sigma_a U (x) 1 |phi>
    Eigen::VectorXcd s(np);
    for (long a = 0; a < np; ++a) s(a) = phi.dot(kron(plan.u.adjoint() * P[a] * plan.u, idE) * phi);
    Eigen::VectorXcd ls = L * s.conjugate();  // sum_n lambda_in s_n^*
    double A2 = (s.transpose() * L * s.conjugate())(0, 0).real();  // sum_ij lambda_ij s_i s_j^*
    if (A2 <= 0) throw ValidationError("nested iteration has zero success probability");
    ComplexMatrix next = L + ((d - 1) / A2) * (ls * ls.adjoint());
    next *= std::pow(A2, d - 1) / d;
    double tr = next.trace().real();
    if (!(tr > 0)) throw ValidationError("nested iteration has zero success probability");
    res.probability *= tr;
    L = next / tr;
    res.lambda00_trace.push_back(L(0, 0).real());
  }
  res.chi = ProcessMatrix(chi0.m, L);
  return res;
}

NestedBound nested_fully_sensitive(int d, int n, double p_ne) {
  if (d < 2 || n < 1) throw ValidationError("nested bound needs d >= 2, n >= 1");
  if (p_ne < 0 || p_ne > 1) throw ValidationError("p_ne out of range");
  NestedBound b{static_cast<double>(d), static_cast<double>(d), false};
  for (int k = 1; k < n && !b.saturated; ++k) {
    b.beta *= b.beta;
    b.saturated = std::isinf(b.beta);
  }
  if (b.saturated) {
    b.f_lower = p_ne > 0 ? 1.0 : 0.0;
    return b;
  }
  b.f_lower = 1 - (1 - p_ne) / (1 + (b.beta - 1) * p_ne);
  return b;
}

double nested_register_count(int d, int n) {
  if (d < 2 || n < 1) throw ValidationError("register count needs d >= 2, n >= 1");
  return std::pow(static_cast<double>(d), n);
}

std::vector<StateVector> default_aux_sequence(int m, int n) {
  if (m < 1 || n < 1) throw ValidationError("default_aux_sequence needs m, n >= 1");
  const std::vector<StateVector> pattern{states::one(),   states::zero(),  states::plus(),
                                         states::minus(), states::right(), states::left()};
  std::vector<StateVector> out;
  for (int k = 0; k < n; ++k) out.push_back(states::tensor_power(pattern[k % 6], m));
  return out;
}

NestedPlan same_aux_plan(int n, int d, const StateVector& aux, const ComplexMatrix& u, int aux_ext) {
  NestedPlan p;
  p.n = n;
  p.d_seq.assign(n, d);
  p.aux_seq.assign(n, aux);
  p.u = u;
  p.aux_ext = aux_ext;
  return p;
}

}  // namespace sqem
