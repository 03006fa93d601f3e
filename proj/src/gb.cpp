#include "sqem/gb.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

namespace sqem {

namespace {

int log2_exact(long n) {
  int k = 0;
  while ((1L << k) < n) ++k;
  if ((1L << k) != n) throw ValidationError("dimension is not a power of two");
  return k;
}

bool same_channel(const KrausChannel& a, const KrausChannel& b) {
  if (a.rank() != b.rank()) return false;
  for (int k = 0; k < a.rank(); ++k)
    if (a.operators[k].rows() != b.operators[k].rows() || max_abs(a.operators[k] - b.operators[k]) != 0)
      return false;
  return true;
}

}  // namespace

void GbConfig::validate() const {
  if (d < 2) throw ValidationError("d must be >= 2");
  if (m < 1) throw ValidationError("m must be >= 1");
  if (aux_ext < 0) throw ValidationError("aux_ext must be >= 0");
  long dm = 1L << m;
  if (u.rows() != dm || !is_unitary(u)) throw ValidationError("U must be a 2^m unitary");
  if (noise.operators.empty() || noise.dim() != dm) throw ValidationError("noise must act on m qubits");
  if (!branch_noise.empty()) {
    if (static_cast<int>(branch_noise.size()) != d) throw ValidationError("branch_noise needs d channels");
    for (const auto& ch : branch_noise)
      if (ch.dim() != dm) throw ValidationError("branch channel must act on m qubits");
  }
  if (aux_state.size() != aux_dim() || std::abs(aux_state.norm() - 1) > kTol)
    throw ValidationError("aux_state must be a normalized register state");
  if (aux_meas_state.size() != aux_dim() || std::abs(aux_meas_state.norm() - 1) > kTol)
    throw ValidationError("aux_meas_state must be a normalized register state");
  if (cswap_noise) {
    if (d != 2) throw ValidationError("noisy cSWAP is only defined for d = 2");
    if (*cswap_noise < 0 || *cswap_noise > 1) throw ValidationError("cswap noise out of range");
  }
  if (keep.kind == KeepRule::Kind::DropWorst && keep.k < 0) throw ValidationError("drop_worst needs k >= 0");
  if (keep.kind == KeepRule::Kind::Threshold && (keep.p_min < 0 || keep.p_min > 1))
    throw ValidationError("threshold must lie in [0, 1]");
  for (const auto& c : correction_set)
    if (c.rows() != dm || !is_unitary(c)) throw ValidationError("corrections must be 2^m unitaries");
}

const KrausChannel& GbConfig::channel_at(int position) const {
  return branch_noise.empty() ? noise : branch_noise[position];
}

ComplexMatrix cswap_unitary(int d, int m) {
  if (d < 2 || m < 1) throw ValidationError("cswap_unitary needs d >= 2, m >= 1");
  long reg = 1L << m;
  long regs = 1;
  for (int k = 0; k < d; ++k) regs *= reg;
  long n = d * regs;
  ComplexMatrix u = ComplexMatrix::Zero(n, n);
  std::vector<long> digit(d);
  for (long x = 0; x < n; ++x) {
    long c = x / regs;
    long rest = x % regs;
    for (int k = d - 1; k >= 0; --k) {
      digit[k] = rest % reg;
      rest /= reg;
    }
    if (c >= 1) std::swap(digit[0], digit[c]);
    long y = 0;
    for (int k = 0; k < d; ++k) y = y * reg + digit[k];
    u(c * regs + y, x) = 1;
  }
  return u;
}

std::vector<StateVector> generalized_x_basis(int d) {
  if (d < 2) throw ValidationError("d must be >= 2");
  std::vector<StateVector> basis;
  for (int l = 0; l < d; ++l) {
    StateVector e(d);
    for (int k = 0; k < d; ++k) e(k) = std::polar(1.0 / std::sqrt(d), 2 * M_PI * k * l / d);
    basis.push_back(e);
  }
  return basis;
}

std::vector<StateVector> aux_measurement_basis(const GbConfig& config) {
  return complete_basis(config.aux_meas_state);
}

StateVector gb_target(const GbConfig& config, const StateVector& input) {
  int R = log2_exact(input.size()) - config.m;
  if (R < 0) throw ValidationError("input smaller than the register");
  return kron(gates::identity(1L << R), config.u) * input;
}

double incoherent_fidelity(const GbConfig& config, const StateVector& input) {
  StateVector t = gb_target(config, input);
  int R = log2_exact(input.size()) - config.m;
  auto shape = SubsystemShape::qubits(R + config.m);
  std::vector<int> sys(config.m);
  std::iota(sys.begin(), sys.end(), R);
  DensityMatrix rho = DensityMatrix::pure(t, shape);
  DensityMatrix out = apply(config.channel_at(0), rho, sys);
  return (t.adjoint() * out.matrix * t)(0, 0).real();
}

// ---------------------------------------------------------------------------------------------
// Dense engine

namespace {

struct Layout {
  int R = 0, m = 0, ext = 0, d = 0;
  int control = 0;
  SubsystemShape shape;
  std::vector<std::vector<int>> active;  // per register position
  std::vector<std::vector<int>> whole;   // auxiliary registers including extension qubits
};

Layout make_layout(int R, int m, int ext, int d) {
  Layout L;
  L.R = R;
  L.m = m;
  L.ext = ext;
  L.d = d;
  std::vector<int> dims(R + m, 2);
  L.control = R + m;
  dims.push_back(d);
  L.active.resize(d);
  L.whole.resize(d);
  for (int q = 0; q < m; ++q) L.active[0].push_back(R + q);
  L.whole[0] = L.active[0];
  for (int j = 1; j < d; ++j) {
    int start = static_cast<int>(dims.size());
    for (int q = 0; q < m + ext; ++q) {
      dims.push_back(2);
      L.whole[j].push_back(start + q);
      if (q < m) L.active[j].push_back(start + q);
    }
  }
  L.shape = SubsystemShape(dims);
  return L;
}

// Basis permutation of a controlled swap; `pairs[c]` lists qubit pairs exchanged when control = c.
std::vector<long> swap_permutation(const SubsystemShape& shape, int control,
                                   const std::vector<std::vector<std::pair<int, int>>>& pairs) {
  long n = shape.total();
  auto st = shape.strides();
  std::vector<long> perm(n);
  for (long x = 0; x < n; ++x) {
    int c = static_cast<int>((x / st[control]) % shape.dims[control]);
    long y = x;
    for (auto [p, q] : pairs[c]) {
      long dp = (x / st[p]) % 2;
      long dq = (x / st[q]) % 2;
      y += (dq - dp) * st[p] + (dp - dq) * st[q];
    }
    perm[x] = y;
  }
  return perm;
}

void permute(ComplexMatrix& rho, const std::vector<long>& perm) {
  long n = rho.rows();
  ComplexMatrix out(n, n);
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i) out(perm[i], perm[j]) = rho(i, j);
  rho = std::move(out);
}

std::vector<long> cswap_perm(const Layout& L) {
  std::vector<std::vector<std::pair<int, int>>> pairs(L.d);
  for (int c = 1; c < L.d; ++c)
    for (int q = 0; q < L.m; ++q) pairs[c].push_back({L.active[0][q], L.active[c][q]});
  return swap_permutation(L.shape, L.control, pairs);
}

void apply_channel(ComplexMatrix& rho, const SubsystemShape& shape, const KrausChannel& ch,
                   const std::vector<int>& targets) {
  if (ch.rank() == 1) {
    conjugate_inplace(rho, shape, ch.operators[0], targets);
    return;
  }
  ComplexMatrix acc = ComplexMatrix::Zero(rho.rows(), rho.cols());
  for (const auto& k : ch.operators) {
    ComplexMatrix t = rho;
    conjugate_inplace(t, shape, k, targets);
    acc += t;
  }
  rho = std::move(acc);
}

// One Fredkin per qubit pair, each followed by depolarizing on its three qubits.
void noisy_cswap_inplace(ComplexMatrix& rho, const Layout& L, double p) {
  KrausChannel dep = depolarizing(p);
  for (int q = 0; q < L.m; ++q) {
    std::vector<std::vector<std::pair<int, int>>> pairs(L.d);
    pairs[1].push_back({L.active[0][q], L.active[1][q]});
    permute(rho, swap_permutation(L.shape, L.control, pairs));
    for (int t : {L.control, L.active[0][q], L.active[1][q]}) apply_channel(rho, L.shape, dep, {t});
  }
}

// Visits every auxiliary outcome tuple in lexicographic order (b_1 most significant).
template <class F>
void for_each_tuple(int count, int base, F&& f) {
  std::vector<int> digits(count, 0);
  while (true) {
    f(digits);
    int k = count - 1;
    while (k >= 0 && ++digits[k] == base) digits[k--] = 0;
    if (k < 0) break;
  }
}

std::vector<ProtocolOutcome> run_dense(const GbConfig& cfg, const StateVector& input, int R) {
  Layout L = make_layout(R, cfg.m, cfg.aux_ext, cfg.d);
  if (L.shape.total() > kDenseCap) throw CapExceeded("dense GB engine: composite space too large");
  std::vector<StateVector> parts{input, generalized_x_basis(cfg.d)[0]};
  for (int j = 1; j < cfg.d; ++j) parts.push_back(cfg.aux_state);
  StateVector ket = kron_all(parts);
  ComplexMatrix rho = ket * ket.adjoint();

  auto perm = cswap_perm(L);
  auto do_cswap = [&] {
    if (cfg.cswap_noise)
      noisy_cswap_inplace(rho, L, *cfg.cswap_noise);
    else
      permute(rho, perm);
  };

  do_cswap();
  for (int p = 0; p < cfg.d; ++p) {
    conjugate_inplace(rho, L.shape, cfg.u, L.active[p]);
    apply_channel(rho, L.shape, cfg.channel_at(p), L.active[p]);
  }
  do_cswap();

  DensityMatrix full(std::move(rho), L.shape, false);
  auto xb = generalized_x_basis(cfg.d);
  auto fb = aux_measurement_basis(cfg);
  std::vector<int> aux_targets;  // indices after the control has been removed
  for (int j = 1; j < cfg.d; ++j)
    for (int t : L.whole[j]) aux_targets.push_back(t - 1);

  std::vector<ProtocolOutcome> out;
  int lmax = cfg.scope == OutcomeScope::Designated ? 1 : cfg.d;
  for (int l = 0; l < lmax; ++l) {
    DensityMatrix rl = project(full, xb[l], {L.control});
    auto visit = [&](const std::vector<int>& digits) {
      std::vector<StateVector> fs;
      for (int j : digits) fs.push_back(fb[j]);
      ProtocolOutcome o;
      o.control_outcome = l;
      o.aux_outcomes = digits;
      o.rho = project(rl, kron_all(fs), aux_targets);
      o.probability = o.rho.trace();
      out.push_back(std::move(o));
    };
    if (cfg.scope == OutcomeScope::Designated)
      visit(std::vector<int>(cfg.d - 1, 0));
    else
      for_each_tuple(cfg.d - 1, static_cast<int>(fb.size()), visit);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Factorized engine: contracts each register's Kraus sum separately.

struct RegisterTerms {
  ComplexMatrix E;  // sum_k Psi_k Psi_k^dagger
  ComplexMatrix S;  // S(f, f') = sum_k c_{f,k} conj(c_{f',k})
  ComplexMatrix Y;  // Y(:, f) = sum_k Psi_k conj(c_{f,k})
};

RegisterTerms register_terms(const KrausChannel& ch, const StateVector& psi_u, int R,
                             const StateVector& phi_u, int ext, const ComplexMatrix& F) {
  long dimA = psi_u.size();
  int r = ch.rank();
  ComplexMatrix Psi(dimA, r);
  ComplexMatrix C(F.cols(), r);
  ComplexMatrix idR = gates::identity(1L << R);
  ComplexMatrix idE = gates::identity(1L << ext);
  for (int k = 0; k < r; ++k) {
    Psi.col(k) = kron(idR, ch.operators[k]) * psi_u;
    C.col(k) = F.adjoint() * (kron(ch.operators[k], idE) * phi_u);
  }
  return {Psi * Psi.adjoint(), C * C.adjoint(), Psi * C.adjoint()};
}

std::vector<ProtocolOutcome> run_factorized(const GbConfig& cfg, const StateVector& input, int R) {
  if (cfg.cswap_noise) throw CapExceeded("noisy cSWAP requires the dense engine");
  int d = cfg.d;
  StateVector psi_u = gb_target(cfg, input);
  StateVector phi_u = kron(cfg.u, gates::identity(1L << cfg.aux_ext)) * cfg.aux_state;
  auto fb = aux_measurement_basis(cfg);
  long D = static_cast<long>(fb.size());
  ComplexMatrix F(D, D);
  for (long j = 0; j < D; ++j) F.col(j) = fb[j];

  bool uniform = cfg.branch_noise.empty();
  if (!uniform) {
    uniform = true;
    for (int p = 1; p < d; ++p) uniform = uniform && same_channel(cfg.branch_noise[p], cfg.branch_noise[0]);
  }
  std::vector<RegisterTerms> terms;
  for (int p = 0; p < (uniform ? 1 : d); ++p)
    terms.push_back(register_terms(cfg.channel_at(p), psi_u, R, phi_u, cfg.aux_ext, F));
  auto T = [&](int p) -> const RegisterTerms& { return terms[uniform ? 0 : p]; };

  long dimA = psi_u.size();
  auto shape = SubsystemShape::qubits(R + cfg.m);
  std::vector<ProtocolOutcome> out;

  auto evaluate = [&](int l, const std::vector<int>& f) {
    ComplexMatrix rho = ComplexMatrix::Zero(dimA, dimA);
    bool all_equal = std::all_of(f.begin(), f.end(), [&](int x) { return x == f[0]; });
    if (uniform && all_equal) {
      // Every branch pair falls into one of two classes.
      int fi = f.empty() ? 0 : f[0];
      double s = T(0).S(fi, fi).real();
      double diag = std::pow(s, d - 1) / d;
      double cross = ((l == 0 ? 1.0 : 0.0) - 1.0 / d) * std::pow(s, d - 2);
      StateVector y = T(0).Y.col(fi);
      rho = diag * T(0).E + cross * (y * y.adjoint());
    } else {
      std::vector<cplx> g(d);
      for (int i = 0; i < d; ++i) g[i] = std::polar(1.0 / d, -2 * M_PI * i * l / d);
      // Outcome index seen by position p in branch i; -1 marks the input's position.
      auto fidx = [&](int i, int p) -> int {
        if (p == i) return -1;
        return p >= 1 ? f[p - 1] : f[i - 1];
      };
      for (int i = 0; i < d; ++i)
        for (int ip = 0; ip < d; ++ip) {
          cplx coef = g[i] * std::conj(g[ip]);
          for (int p = 0; p < d; ++p) {
            if (p == i || p == ip) continue;
            coef *= T(p).S(fidx(i, p), fidx(ip, p));
          }
          if (coef == cplx(0)) continue;
          if (i == ip) {
            rho += coef * T(i).E;
          } else {
            StateVector ket = T(i).Y.col(fidx(ip, i));
            StateVector bra = T(ip).Y.col(fidx(i, ip));
            rho += coef * (ket * bra.adjoint());
          }
        }
    }
    ProtocolOutcome o;
    o.control_outcome = l;
    o.aux_outcomes = f;
    o.rho = DensityMatrix(std::move(rho), shape, false);
    o.probability = o.rho.trace();
    out.push_back(std::move(o));
  };

  if (cfg.scope == OutcomeScope::Designated) {
    evaluate(0, std::vector<int>(d - 1, 0));
  } else {
    for (int l = 0; l < d; ++l)
      for_each_tuple(d - 1, static_cast<int>(D), [&](const std::vector<int>& f) { evaluate(l, f); });
  }
  return out;
}

}  // namespace

std::vector<ProtocolOutcome> run_gb(const GbConfig& config, const StateVector& input) {
  config.validate();
  int R = log2_exact(input.size()) - config.m;
  if (R < 0) throw ValidationError("input smaller than the register");
  if (std::abs(input.norm() - 1) > kTol) throw ValidationError("input must be normalized");

  long dense_dim = (1L << (R + config.m)) * config.d;
  for (int j = 1; j < config.d; ++j) {
    dense_dim *= config.aux_dim();
    if (dense_dim > kDenseCap) break;
  }
  GbEngine engine = config.engine;
  if (engine == GbEngine::Auto)
    engine = (dense_dim <= kDenseCap || config.cswap_noise) ? GbEngine::Dense : GbEngine::Factorized;

  auto outcomes = engine == GbEngine::Dense ? run_dense(config, input, R) : run_factorized(config, input, R);
  StateVector t = gb_target(config, input);
  for (auto& o : outcomes)
    o.fidelity = o.probability < kZeroOutcome ? 1.0 : (t.adjoint() * o.rho.matrix * t)(0, 0).real() / o.probability;
  return outcomes;
}

AnalyticOutput analytic_rho_out(const KrausChannel& noise, const ComplexMatrix& u, const StateVector& phi0,
                                const StateVector& phif, int d, const StateVector& input, int aux_ext) {
  if (d < 2) throw ValidationError("d must be >= 2");
  int m = log2_exact(u.rows());
  int R = log2_exact(input.size()) - m;
  ComplexMatrix idR = gates::identity(1L << R);
  ComplexMatrix idE = gates::identity(1L << aux_ext);
  StateVector psi_u = kron(idR, u) * input;
  ComplexMatrix rho_u = psi_u * psi_u.adjoint();
  StateVector phi_u = kron(u, idE) * phi0;

  int r = noise.rank();
  std::vector<cplx> c(r);
  std::vector<ComplexMatrix> K(r);
  double A2 = 0;
  for (int i = 0; i < r; ++i) {
    K[i] = kron(idR, noise.operators[i]);
    c[i] = phif.dot(kron(noise.operators[i], idE) * phi_u);
    A2 += std::norm(c[i]);
  }
  double Ad = std::pow(A2, d - 1);
  ComplexMatrix incoherent = ComplexMatrix::Zero(rho_u.rows(), rho_u.cols());
  ComplexMatrix M = ComplexMatrix::Zero(K[0].rows(), K[0].cols());
  for (int i = 0; i < r; ++i) {
    incoherent += K[i] * rho_u * K[i].adjoint();
    M += std::conj(c[i]) * K[i];
  }
  ComplexMatrix out = incoherent;
  if (A2 > 0) out += ((d - 1) / A2) * (M * rho_u * M.adjoint());
  out *= Ad / d;
  DensityMatrix rho(out, SubsystemShape::qubits(R + m), false);
  return {rho, rho.trace()};
}

Omega omega_params(const KrausChannel& noise, const ComplexMatrix& u, const StateVector& phi0,
                   const StateVector& phif, int aux_ext) {
  double p_ne = kraus_to_chi(noise).p_ne();
  ComplexMatrix idE = gates::identity(1L << aux_ext);
  StateVector phi_u = kron(u, idE) * phi0;
  double w2 = std::norm(phif.dot(phi_u));
  if (p_ne > 1 - kTol) throw ValidationError("omega_1 undefined for a noiseless channel");
  double s = 0;
  for (int j = 1; j < noise.rank(); ++j) s += std::norm(phi_u.dot(kron(noise.operators[j], idE) * phi_u));
  double w1 = 1 - s / (1 - p_ne);
  return {std::clamp(w1, 0.0, 1.0), std::clamp(w2, 0.0, 1.0)};
}

Bounds depolarizing_bounds(int d, int m, double p0) {
  if (d < 2 || m < 1) throw ValidationError("depolarizing_bounds needs d >= 2, m >= 1");
  if (p0 < 0 || p0 > 1) throw ValidationError("p0 out of range");
  double pm = std::pow(p0, m);
  // p^{md} + (p^{md}/d)(p^{-m} - 1), written without the negative power.
  double P = std::pow(p0, m * d) * (1 - 1.0 / d) + std::pow(p0, m * (d - 1)) / d;
  double F = d * pm / (pm * (d - 1) + 1);
  return {P, F};
}

ChiUpdate chi_update_full_sensitivity(const ProcessMatrix& chi, int d) {
  if (d < 2) throw ValidationError("d must be >= 2");
  const ComplexMatrix& L = chi.lambda;
  double l00 = L(0, 0).real();
  ComplexMatrix out = l00 * L + (d - 1.0) * (L.col(0) * L.row(0));
  out *= std::pow(l00, d - 2) / d;
  double P = out.trace().real();
  if (P <= 0) throw ValidationError("chi update has zero success probability");
  return {ProcessMatrix(chi.m, out / P), P};
}

const std::vector<ComplexMatrix>& single_qubit_cliffords() {
  static std::once_flag once;
  static std::vector<ComplexMatrix> group;
  std::call_once(once, [] {
    auto canonical = [](ComplexMatrix m) {
      for (long k = 0; k < m.size(); ++k)
        if (std::abs(m(k)) > 1e-9) {
          m *= std::abs(m(k)) / m(k);
          break;
        }
      return m;
    };
    auto contains = [&](const ComplexMatrix& m) {
      for (const auto& g : group)
        if (max_abs(g - m) < 1e-9) return true;
      return false;
    };
    group.push_back(gates::I2());
    for (size_t k = 0; k < group.size(); ++k)
      for (const auto& gen : {gates::H(), gates::S()}) {
        ComplexMatrix c = canonical(gen * group[k]);
        if (!contains(c)) group.push_back(c);
      }
  });
  return group;
}

std::vector<ComplexMatrix> clifford_corrections(int m) {
  std::vector<ComplexMatrix> out{ComplexMatrix::Identity(1, 1)};
  for (int q = 0; q < m; ++q) {
    std::vector<ComplexMatrix> next;
    for (const auto& a : out)
      for (const auto& c : single_qubit_cliffords()) next.push_back(kron(a, c));
    out = std::move(next);
  }
  return out;
}

void choose_corrections(std::vector<ProtocolOutcome>& outcomes, const StateVector& target,
                        const std::vector<ComplexMatrix>& correction_set, int ref_qubits) {
  if (correction_set.empty()) throw ValidationError("empty correction set");
  ComplexMatrix idR = gates::identity(1L << ref_qubits);
  // Column c holds (1 (x) C^dagger) t, so that F_C = v_c^dagger rho v_c.
  ComplexMatrix V(target.size(), static_cast<long>(correction_set.size()));
  for (size_t c = 0; c < correction_set.size(); ++c)
    V.col(static_cast<long>(c)) = kron(idR, correction_set[c].adjoint()) * target;

  for (auto& o : outcomes) {
    if (o.probability < kZeroOutcome) {
      o.fidelity = 1.0;
      o.correction.reset();
      continue;
    }
    ComplexMatrix RV = o.rho.matrix * V;
    Eigen::VectorXd f = (V.conjugate().cwiseProduct(RV)).colwise().sum().real().transpose();
    Eigen::Index best;
    double fmax = f.maxCoeff(&best);
    o.fidelity = fmax / o.probability;
    o.correction = correction_set[best];
  }
}

QuasiResult quasi_deterministic(const GbConfig& config, const StateVector& input,
                                std::vector<ProtocolOutcome> outcomes) {
  std::vector<ComplexMatrix> set = config.correction_set.empty() ? clifford_corrections(config.m)
                                                                 : config.correction_set;
  choose_corrections(outcomes, gb_target(config, input), set, log2_exact(input.size()) - config.m);

  std::vector<const ProtocolOutcome*> live;
  for (const auto& o : outcomes)
    if (o.probability >= kZeroOutcome) live.push_back(&o);
  std::stable_sort(live.begin(), live.end(),
                   [](const ProtocolOutcome* a, const ProtocolOutcome* b) { return a->fidelity > b->fidelity; });
  size_t keep_count = live.size();
  switch (config.keep.kind) {
    case KeepRule::Kind::KeepAll:
      break;
    case KeepRule::Kind::DropWorst:
      keep_count = live.size() > static_cast<size_t>(config.keep.k) ? live.size() - config.keep.k : 0;
      break;
    case KeepRule::Kind::Threshold: {
      double acc = 0;
      keep_count = 0;
      while (keep_count < live.size() && acc < config.keep.p_min - kTol) acc += live[keep_count++]->probability;
      break;
    }
  }
  QuasiResult res;
  std::vector<std::pair<double, double>> pf;
  for (size_t k = 0; k < keep_count; ++k) {
    res.kept.push_back(*live[k]);
    pf.push_back({live[k]->probability, live[k]->fidelity});
  }
  auto [P, F] = pf.empty() ? std::pair<double, double>{0.0, 1.0} : weighted_cj(pf);
  res.report = make_report(incoherent_fidelity(config, input), F, P);
  return res;
}

GbResult run_protocol(const GbConfig& config, const StateVector& input) {
  GbResult res;
  GbConfig cfg = config;
  if (cfg.mode == GbMode::Probabilistic) {
    cfg.scope = OutcomeScope::Designated;
    res.outcomes = run_gb(cfg, input);
    auto& o = res.outcomes.front();
    // The designated outcome is conditioned on even when its probability underflows the
    // zero-outcome cutoff (large d); the conditional state is still well defined.
    if (o.probability > 0) {
      StateVector t = gb_target(cfg, input);
      o.fidelity = (t.adjoint() * o.rho.matrix * t)(0, 0).real() / o.probability;
    }
    res.kept = {o};
    res.report = make_report(incoherent_fidelity(cfg, input), o.fidelity, o.probability);
    return res;
  }
  if (cfg.mode == GbMode::Deterministic) cfg.keep = KeepRule::keep_all();
  cfg.scope = OutcomeScope::All;
  res.outcomes = run_gb(cfg, input);
  auto q = quasi_deterministic(cfg, input, res.outcomes);
  res.kept = std::move(q.kept);
  res.report = q.report;
  return res;
}

DensityTransformer noisy_cswap(int d, int m, double p_cswap) {
  if (d != 2) throw ValidationError("noisy cSWAP is only defined for d = 2");
  if (p_cswap < 0 || p_cswap > 1) throw ValidationError("p_cswap out of range");
  Layout L;
  L.m = m;
  L.d = 2;
  L.control = 0;
  std::vector<int> dims(1 + 2 * m, 2);
  L.shape = SubsystemShape(dims);
  L.active.resize(2);
  for (int q = 0; q < m; ++q) {
    L.active[0].push_back(1 + q);
    L.active[1].push_back(1 + m + q);
  }
  return [L, p_cswap](const DensityMatrix& rho) {
    if (!(rho.shape == L.shape)) throw ValidationError("noisy cSWAP: state has the wrong shape");
    DensityMatrix out = rho;
    noisy_cswap_inplace(out.matrix, L, p_cswap);
    return out;
  };
}

double p_relative(double p_cswap, double p0) {
  if (p0 >= 1) throw ValidationError("p_relative undefined for p0 = 1");
  return (1 - p_cswap) / (1 - p0);
}

LayeredCircuit layered_circuit(int n_layers, double p0) {
  if (n_layers < 1) throw ValidationError("n_layers must be >= 1");
  LayeredCircuit c;
  KrausChannel dep1 = depolarizing(p0);
  KrausChannel dep2 = tensor_channel(dep1, 2);
  c.u_total = gates::identity(4);
  for (int k = 0; k < n_layers; ++k) {
    c.sequence.push_back({gates::CNOT(), {0, 1}, dep2});
    c.sequence.push_back({gates::T(), {0}, dep1});
    c.sequence.push_back({gates::T(), {1}, dep1});
    c.u_total = kron(gates::T(), gates::T()) * gates::CNOT() * c.u_total;
  }
  return c;
}

KrausChannel effective_noise(const LayeredCircuit& circuit, int m) {
  auto shape = SubsystemShape::qubits(m);
  long dim = 1L << m;
  std::vector<ComplexMatrix> ops{gates::identity(dim)};
  for (const auto& g : circuit.sequence) {
    ComplexMatrix G = embed(g.u, g.targets, shape);
    std::vector<ComplexMatrix> next;
    for (const auto& k : g.noise.operators) {
      ComplexMatrix KG = embed(k, g.targets, shape) * G;
      for (const auto& op : ops) next.push_back(KG * op);
    }
    ops = canonicalize(KrausChannel(std::move(next), false)).operators;
  }
  for (auto& op : ops) op = op * circuit.u_total.adjoint();
  return KrausChannel(std::move(ops));
}

}  // namespace sqem
