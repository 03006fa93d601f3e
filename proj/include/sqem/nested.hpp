#pragma once

#include "sqem/channels.hpp"

#include <vector>

namespace sqem {

struct NestedPlan {
  int n = 1;
  std::vector<int> d_seq;           // branch count per iteration
  std::vector<StateVector> aux_seq; // auxiliary state per iteration
  ComplexMatrix u;
  int aux_ext = 0;                  // noiseless partner qubits appended to each auxiliary

  void validate(int m) const;
};

struct NestedResult {
  ProcessMatrix chi;                 // normalized
  double probability = 1.0;          // product of per-iteration traces
  std::vector<double> lambda00_trace;  // lambda_00 after each iteration
};

// Iterates the chi-space update with projection onto U|phi_k> at every step.
NestedResult nested_chi(const ProcessMatrix& chi0, const NestedPlan& plan);

struct NestedBound {
  double f_lower;
  double beta;
  bool saturated;  // beta exceeds double range; reported as infinity
};
// Closed-form bound with beta = d^(2^(n-1)).
NestedBound nested_fully_sensitive(int d, int n, double p_ne);

// Branch count reached by n fully sensitive iterations with d branches each: d^n.
double nested_register_count(int d, int n);

// |1>, |0>, |+>, |->, |R>, |L> (each tensored m times), repeating.
std::vector<StateVector> default_aux_sequence(int m, int n);

NestedPlan same_aux_plan(int n, int d, const StateVector& aux, const ComplexMatrix& u, int aux_ext = 0);

}  // namespace sqem
