#pragma once

#include "sqem/qmath.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace sqem {

struct FidelityReport {
  double f_coherent = 1.0;
  double f_incoherent = 1.0;
  double ratio = 1.0;
  bool ratio_infinite = false;
  double success_probability = 1.0;
};

double state_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma);
double state_fidelity(const ComplexMatrix& rho, const ComplexMatrix& sigma);

// Maps a (ref (x) system) density matrix to a possibly subnormalized one; acts on the system half.
using StateTransformer = std::function<ComplexMatrix(const ComplexMatrix&)>;

// Overlap of the protocol's Choi state with the ideal one. Subnormalized outputs are renormalized.
double cj_fidelity(const StateTransformer& protocol, const ComplexMatrix& u);

struct Ratio {
  double value;
  bool infinite;
};
Ratio infidelity_ratio(double f_incoherent, double f_coherent);

FidelityReport make_report(double f_incoherent, double f_coherent, double success_probability);

// (P, F) = (sum p, sum p f / P) over outcomes with p >= 1e-12.
std::pair<double, double> weighted_cj(const std::vector<std::pair<double, double>>& outcomes);

}  // namespace sqem
