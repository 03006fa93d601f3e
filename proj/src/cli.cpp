#include "sqem/cli.hpp"

#include "sqem/gb.hpp"
#include "sqem/ib.hpp"
#include "sqem/mb.hpp"
#include "sqem/nested.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace sqem {

using nlohmann::json;

namespace {

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Gb: return "gb";
    case Protocol::Nested: return "nested";
    case Protocol::Mb: return "mb";
    case Protocol::Ib: return "ib";
  }
  return "";
}

[[noreturn]] void fail(const std::string& msg) { throw ValidationError("config: " + msg); }

std::vector<double> number_grid(const json& j, const char* key) {
  if (j.is_number()) return {j.get<double>()};
  if (j.is_array()) {
    std::vector<double> v;
    for (const auto& x : j) {
      if (!x.is_number()) fail(fmt::format("{} entries must be numbers", key));
      v.push_back(x.get<double>());
    }
    return v;
  }
  if (j.is_object()) {
    if (!j.contains("from") || !j.contains("to") || !j.contains("count")) fail(fmt::format("{} range needs from, to, count", key));
    double a = j["from"].get<double>(), b = j["to"].get<double>();
    int n = j["count"].get<int>();
    if (n < 0) fail(fmt::format("{} count must be nonnegative", key));
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
    return v;
  }
  fail(fmt::format("{} must be a number, array or range", key));
}

std::vector<int> int_grid(const json& j, const char* key) {
  if (j.is_number_integer()) return {j.get<int>()};
  if (j.is_array()) {
    std::vector<int> v;
    for (const auto& x : j) {
      if (!x.is_number_integer()) fail(fmt::format("{} entries must be integers", key));
      v.push_back(x.get<int>());
    }
    return v;
  }
  if (j.is_object()) {
    if (!j.contains("from") || !j.contains("to")) fail(fmt::format("{} range needs from, to", key));
    int a = j["from"].get<int>(), b = j["to"].get<int>(), s = j.value("step", 1);
    if (s <= 0) fail(fmt::format("{} step must be positive", key));
    std::vector<int> v;
    for (int x = a; x <= b; x += s) v.push_back(x);
    return v;
  }
  fail(fmt::format("{} must be an integer, array or range", key));
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (j.is_string()) return {j.get<std::string>()};
  if (!j.is_array()) fail(fmt::format("{} must be a string or array", key));
  std::vector<std::string> v;
  for (const auto& x : j) {
    if (!x.is_string()) fail(fmt::format("{} entries must be strings", key));
    v.push_back(x.get<std::string>());
  }
  return v;
}

ComplexMatrix parse_matrix(const json& j) {
  if (!j.is_array() || j.empty()) fail("matrix must be a nonempty array of rows");
  long n = static_cast<long>(j.size());
  ComplexMatrix m(n, n);
  for (long r = 0; r < n; ++r) {
    if (!j[r].is_array() || static_cast<long>(j[r].size()) != n) fail("matrix must be square");
    for (long c = 0; c < n; ++c) {
      const json& e = j[r][c];
      if (e.is_number())
        m(r, c) = e.get<double>();
      else if (e.is_array() && e.size() == 2)
        m(r, c) = cplx(e[0].get<double>(), e[1].get<double>());
      else
        fail("matrix entries are numbers or [re, im] pairs");
    }
  }
  return m;
}

GateSpec parse_gate(const json& j) {
  GateSpec g;
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "layered") {
      g.kind = GateSpec::Kind::Layered;
    } else {
      if (s == "CNOT") s = "cNOT";
      static const std::set<std::string> known{"T", "cNOT", "CZ", "H", "I"};
      if (!known.count(s)) fail("unknown gate " + s);
      g.name = s;
    }
    return g;
  }
  if (!j.is_object()) fail("gate must be a name or an object");
  g.kind = GateSpec::Kind::Matrix;
  g.name = j.value("label", std::string("custom"));
  if (g.name.find_first_of(",\"\n") != std::string::npos) fail("gate label may not contain commas, quotes or newlines");
  if (j.contains("matrix")) {
    g.matrix = parse_matrix(j["matrix"]);
  } else if (j.contains("matrix_file")) {
    std::ifstream in(j["matrix_file"].get<std::string>());
    if (!in) fail("cannot open matrix file " + j["matrix_file"].get<std::string>());
    json m;
    try {
      in >> m;
    } catch (const json::exception& e) {
      fail(std::string("matrix file: ") + e.what());
    }
    g.matrix = parse_matrix(m);
  } else {
    fail("custom gate needs matrix or matrix_file");
  }
  long dim = g.matrix.rows();
  if (dim < 2 || (dim & (dim - 1))) fail("custom gate dimension must be a power of two");
  if (!is_unitary(g.matrix)) fail("custom gate is not unitary");
  return g;
}

AuxSpec::Measure parse_measure(const json& j, AuxSpec& a) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "ideal") return AuxSpec::Measure::Ideal;
    if (s == "same") return AuxSpec::Measure::Same;
    if (s == "x") return AuxSpec::Measure::XBasis;
    fail("unknown measure " + s);
  }
  if (j.is_object() && j.contains("phase")) {
    a.measure_phase = j["phase"].get<double>();
    return AuxSpec::Measure::Phase;
  }
  fail("measure must be ideal, same, x or {phase}");
}

AuxSpec parse_aux(const json& j) {
  AuxSpec a;
  auto set_state = [&a](const std::string& s) {
    static const std::set<std::string> named{"plus", "minus", "zero", "one", "right", "left"};
    if (s == "auto")
      a.state = AuxSpec::State::Auto;
    else if (s == "bell")
      a.state = AuxSpec::State::Bell;
    else if (s == "alternating")
      a.state = AuxSpec::State::Alternating;
    else if (named.count(s)) {
      a.state = AuxSpec::State::Named;
      a.name = s;
    } else {
      fail("unknown auxiliary state " + s);
    }
  };
  if (j.is_string()) {
    set_state(j.get<std::string>());
    return a;
  }
  if (!j.is_object()) fail("aux entries are names or objects");
  if (j.contains("bloch")) {
    const json& b = j["bloch"];
    if (!b.is_array() || b.size() != 2) fail("bloch takes [theta, phi]");
    a.state = AuxSpec::State::Bloch;
    a.theta = b[0].get<double>();
    a.phi = b[1].get<double>();
  } else if (j.contains("state")) {
    set_state(j["state"].get<std::string>());
  }
  if (j.contains("measure")) a.measure = parse_measure(j["measure"], a);
  return a;
}

// Cartesian product of Bloch angles and measurement phases.
std::vector<AuxSpec> parse_aux_grid(const json& j) {
  std::vector<double> th = number_grid(j.value("theta", json(0.0)), "aux_grid.theta");
  std::vector<double> ph = number_grid(j.value("phi", json(0.0)), "aux_grid.phi");
  std::string meas = j.value("measure", std::string("ideal"));
  std::vector<double> mp{0.0};
  if (meas == "phase") mp = number_grid(j.value("measure_phase", json(0.0)), "aux_grid.measure_phase");
  std::vector<AuxSpec> out;
  for (double t : th)
    for (double p : ph)
      for (double q : mp) {
        AuxSpec a;
        a.state = AuxSpec::State::Bloch;
        a.theta = t;
        a.phi = p;
        if (meas == "phase") {
          a.measure = AuxSpec::Measure::Phase;
          a.measure_phase = q;
        } else {
          a.measure = parse_measure(json(meas), a);
        }
        out.push_back(a);
      }
  return out;
}

SweepSpec parse_sweep(const json& j) {
  static const std::set<std::string> keys{"protocol", "gate",    "noise",       "p0",      "d",      "n",
                                          "layers",   "modes",   "mode",        "aux",     "aux_grid",
                                          "p_relative", "keep",  "scope",       "variant", "propagation",
                                          "samples",  "cap",     "description"};
  SweepSpec s;
  if (!j.is_object()) fail("experiment must be an object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) fail("unknown key " + k);
  if (!j.contains("protocol")) fail("missing protocol");
  std::string p = j["protocol"].get<std::string>();
  if (p == "gb")
    s.protocol = Protocol::Gb;
  else if (p == "nested")
    s.protocol = Protocol::Nested;
  else if (p == "mb")
    s.protocol = Protocol::Mb;
  else if (p == "ib")
    s.protocol = Protocol::Ib;
  else
    fail("unknown protocol " + p);
  if (!j.contains("gate")) fail("missing gate");
  s.gate = parse_gate(j["gate"]);
  if (j.contains("noise")) s.noise = j["noise"].get<std::string>();
  if (s.noise != "depolarizing" && s.noise != "dephasing") fail("noise must be depolarizing or dephasing");
  if (!j.contains("p0")) fail("missing p0");
  s.p0 = number_grid(j["p0"], "p0");
  if (j.contains("d")) s.d = int_grid(j["d"], "d");
  if (j.contains("n")) s.n = int_grid(j["n"], "n");
  if (j.contains("layers")) s.layers = int_grid(j["layers"], "layers");
  if (j.contains("modes")) s.modes = string_list(j["modes"], "modes");
  if (j.contains("mode")) s.modes = string_list(j["mode"], "mode");
  if (j.contains("aux") || j.contains("aux_grid")) s.aux.clear();
  if (j.contains("aux")) {
    const json& a = j["aux"];
    if (a.is_array())
      for (const auto& x : a) s.aux.push_back(parse_aux(x));
    else
      s.aux.push_back(parse_aux(a));
  }
  if (j.contains("aux_grid")) {
    auto g = parse_aux_grid(j["aux_grid"]);
    s.aux.insert(s.aux.end(), g.begin(), g.end());
  }
  if (j.contains("p_relative")) s.p_relative = number_grid(j["p_relative"], "p_relative");
  if (j.contains("keep")) {
    const json& k = j["keep"];
    if (k.is_string() && k.get<std::string>() == "all") {
      s.keep = "all";
    } else if (k.is_object() && k.contains("drop_worst")) {
      s.keep = "drop-worst";
      s.keep_value = k["drop_worst"].get<int>();
    } else if (k.is_object() && k.contains("threshold")) {
      s.keep = "threshold";
      s.keep_value = k["threshold"].get<double>();
    } else {
      fail("keep must be \"all\", {drop_worst: k} or {threshold: p}");
    }
  }
  s.scope = j.value("scope", s.scope);
  s.variant = j.value("variant", s.variant);
  s.propagation = j.value("propagation", s.propagation);
  s.samples = j.value("samples", s.samples);
  s.cap = j.value("cap", s.cap);
  return s;
}

StateVector single_state(const std::string& name) {
  if (name == "plus") return states::plus();
  if (name == "minus") return states::minus();
  if (name == "zero") return states::zero();
  if (name == "one") return states::one();
  if (name == "right") return states::right();
  return states::left();
}

StateVector bloch(double theta, double phi) {
  StateVector s(2);
  s << std::cos(theta / 2), std::polar(std::sin(theta / 2), phi);
  return s;
}

ComplexMatrix named_gate(const std::string& n) {
  if (n == "T") return gates::T();
  if (n == "H") return gates::H();
  if (n == "I") return gates::I2();
  if (n == "cNOT") return gates::CNOT();
  return gates::CZ();
}

KrausChannel noise_channel(const std::string& kind, double p0) {
  return kind == "dephasing" ? dephasing(p0) : depolarizing(p0);
}

// One evaluation unit; labels are fixed before any computation.
struct Point {
  const SweepSpec* sweep;
  int layers = 0;
  std::optional<double> p_relative;
  double p0 = 0;
  int d = 2;
  int n = 0;
  std::string mode;
  AuxSpec aux;
  ResultRow row;
};

std::string gate_label(const SweepSpec& s, int layers) {
  if (s.gate.kind == GateSpec::Kind::Layered) return fmt::format("layered({})", layers);
  return s.gate.name;
}

std::string noise_label(const SweepSpec& s, const std::optional<double>& prel) {
  std::string l = s.noise;
  if (prel) l += fmt::format("/cswap-prel={}", *prel);
  if (s.protocol == Protocol::Mb && s.scope != "computation") l += "/" + s.scope;
  return l;
}

// Candidate post-selection states for x / phase bases: products of the two single-qubit elements.
std::vector<StateVector> basis_candidates(const AuxSpec& a, int m) {
  StateVector b0(2), b1(2);
  double phase = a.measure == AuxSpec::Measure::Phase ? a.measure_phase : 0.0;
  b0 << 1, std::polar(1.0, phase);
  b1 << 1, -std::polar(1.0, phase);
  b0 /= std::sqrt(2.0);
  b1 /= std::sqrt(2.0);
  std::vector<StateVector> out;
  for (int k = 0; k < (1 << m); ++k) {
    StateVector v = StateVector::Ones(1);
    for (int q = 0; q < m; ++q) v = kron(v, ((k >> (m - 1 - q)) & 1) ? b1 : b0);
    out.push_back(v);
  }
  return out;
}

GbMode gb_mode(const std::string& m) {
  if (m == "probabilistic") return GbMode::Probabilistic;
  if (m == "quasi-deterministic") return GbMode::QuasiDeterministic;
  return GbMode::Deterministic;
}

StateVector aux_single_register(const AuxSpec& a, int m) {
  if (a.state == AuxSpec::State::Bloch) return states::tensor_power(bloch(a.theta, a.phi), m);
  return states::tensor_power(single_state(a.name), m);
}

// Fully sensitive default: |+>^m against dephasing, a Bell pair per qubit otherwise.
void resolve_auto(AuxSpec& a, const std::string& noise) {
  if (a.state != AuxSpec::State::Auto) return;
  if (noise == "dephasing") {
    a.state = AuxSpec::State::Named;
    a.name = "plus";
  } else {
    a.state = AuxSpec::State::Bell;
  }
}

FidelityReport eval_gb(const Point& pt) {
  const SweepSpec& s = *pt.sweep;
  GbConfig c;
  c.d = pt.d;
  if (s.gate.kind == GateSpec::Kind::Layered) {
    LayeredCircuit lc = layered_circuit(pt.layers, pt.p0);
    c.m = 2;
    c.u = lc.u_total;
    c.noise = effective_noise(lc, 2);
  } else {
    c.u = s.gate.kind == GateSpec::Kind::Matrix ? s.gate.matrix : named_gate(s.gate.name);
    c.m = static_cast<int>(std::lround(std::log2(static_cast<double>(c.u.rows()))));
    c.noise = tensor_channel(noise_channel(s.noise, pt.p0), c.m);
  }
  AuxSpec a = pt.aux;
  resolve_auto(a, s.noise);
  if (a.state == AuxSpec::State::Bell) {
    c.aux_ext = c.m;
    c.aux_state = max_entangled(c.m);
  } else {
    c.aux_state = aux_single_register(a, c.m);
  }
  ComplexMatrix lifted = kron(c.u, gates::identity(1L << c.aux_ext));
  if (pt.p_relative && *pt.p_relative > 0) c.cswap_noise = 1 - *pt.p_relative * (1 - pt.p0);
  c.mode = gb_mode(pt.mode);
  if (s.keep == "drop-worst")
    c.keep = KeepRule::drop_worst(static_cast<int>(s.keep_value));
  else if (s.keep == "threshold")
    c.keep = KeepRule::threshold(s.keep_value);
  StateVector input = max_entangled(c.m);
  switch (a.measure) {
    case AuxSpec::Measure::Default:
    case AuxSpec::Measure::Ideal: c.aux_meas_state = lifted * c.aux_state; break;
    case AuxSpec::Measure::Same: c.aux_meas_state = c.aux_state; break;
    case AuxSpec::Measure::XBasis:
    case AuxSpec::Measure::Phase: {
      GbConfig probe = c;
      probe.mode = GbMode::Probabilistic;
      probe.scope = OutcomeScope::Designated;
      double best = -1;
      for (const auto& cand : basis_candidates(a, c.m + c.aux_ext)) {
        probe.aux_meas_state = cand;
        double p = run_protocol(probe, input).report.success_probability;
        if (p > best + 1e-15) {
          best = p;
          c.aux_meas_state = cand;
        }
      }
      break;
    }
  }
  return run_protocol(c, input).report;
}

FidelityReport eval_nested(const Point& pt) {
  const SweepSpec& s = *pt.sweep;
  ComplexMatrix u;
  KrausChannel noise;
  if (s.gate.kind == GateSpec::Kind::Layered) {
    LayeredCircuit lc = layered_circuit(pt.layers, pt.p0);
    u = lc.u_total;
    noise = effective_noise(lc, 2);
  } else {
    u = s.gate.kind == GateSpec::Kind::Matrix ? s.gate.matrix : named_gate(s.gate.name);
    noise = tensor_channel(noise_channel(s.noise, pt.p0), s.qubits());
  }
  int m = s.qubits();
  ProcessMatrix chi = kraus_to_chi(noise);
  AuxSpec a = pt.aux;
  resolve_auto(a, s.noise);
  NestedPlan plan;
  if (a.state == AuxSpec::State::Bell) {
    plan = same_aux_plan(pt.n, pt.d, max_entangled(m), u, m);
  } else if (a.state == AuxSpec::State::Alternating) {
    plan.n = pt.n;
    plan.d_seq.assign(pt.n, pt.d);
    plan.aux_seq = default_aux_sequence(m, pt.n);
    plan.u = u;
  } else {
    plan = same_aux_plan(pt.n, pt.d, aux_single_register(a, m), u);
  }
  NestedResult r = nested_chi(chi, plan);
  return make_report(chi.p_ne(), r.chi.p_ne(), r.probability);
}

MbComputation mb_gate(const SweepSpec& s, int layers) {
  if (s.gate.kind == GateSpec::Kind::Layered) return mb_layers(layers);
  if (s.gate.name == "T") return mb_t_gate();
  if (s.gate.name == "cNOT") return mb_cnot();
  if (s.gate.name == "CZ") return MbComputation{2, {{MbOp::Kind::Cz, {0, 1}, 0.0}}};
  return MbComputation{1, {{MbOp::Kind::H, {0}, 0.0}}};
}

FidelityReport eval_mb(const Point& pt, std::uint64_t seed, double& error) {
  const SweepSpec& s = *pt.sweep;
  MbConfig c;
  c.d = pt.d;
  c.u = mb_gate(s, pt.layers);
  c.m = c.u.m;
  c.noise = noise_channel(s.noise, pt.p0);
  c.scope = s.scope == "all-qubits" ? NoiseScope::AllQubits : NoiseScope::ComputationOnly;
  c.variant = s.variant == "a" ? CswapVariant::A : CswapVariant::B;
  c.propagation = s.propagation == "trajectories" ? Propagation::Trajectories : Propagation::Density;
  c.samples = s.samples;
  c.cap = s.cap;
  c.seed = seed;
  c.mode = gb_mode(pt.mode);
  AuxSpec a = pt.aux;
  if (a.state == AuxSpec::State::Auto) {
    a.state = AuxSpec::State::Named;
    a.name = "plus";
  }
  c.aux_state = aux_single_register(a, c.m);
  StateVector input = max_entangled(c.m);
  switch (a.measure) {
    case AuxSpec::Measure::Default:
    case AuxSpec::Measure::Same: c.aux_meas_state = c.aux_state; break;
    case AuxSpec::Measure::Ideal: c.aux_meas_state = c.u.unitary() * c.aux_state; break;
    case AuxSpec::Measure::XBasis:
    case AuxSpec::Measure::Phase: {
      MbConfig probe = c;
      probe.mode = GbMode::Probabilistic;
      double best = -1;
      for (const auto& cand : basis_candidates(a, c.m)) {
        probe.aux_meas_state = cand;
        double p = run_mb_sqem(probe, input).report.success_probability;
        if (p > best + 1e-15) {
          best = p;
          c.aux_meas_state = cand;
        }
      }
      break;
    }
  }
  MbResult r = run_mb_sqem(c, input);
  error = r.f_error;
  return r.report;
}

FidelityReport eval_ib(const Point& pt) {
  const SweepSpec& s = *pt.sweep;
  IbConfig c;
  c.d = pt.d;
  c.u = s.gate.kind == GateSpec::Kind::Matrix ? s.gate.matrix : named_gate(s.gate.name);
  c.m = static_cast<int>(std::lround(std::log2(static_cast<double>(c.u.rows()))));
  c.noise = tensor_channel(noise_channel(s.noise, pt.p0), c.m);
  c.vio = vio_tensor_power(s.noise == "dephasing" ? vio_dephasing(pt.p0) : vio_depolarizing(pt.p0), c.m);
  if (pt.mode == "deterministic") {
    c.mode = IbMode::Deterministic;
    c.correction_set = std::vector<ComplexMatrix>{};
  }
  return run_ib(c, max_entangled(c.m)).report;
}

void check_sweep(const SweepSpec& s) {
  static const std::set<std::string> modes{"probabilistic", "quasi-deterministic", "deterministic"};
  const bool layered = s.gate.kind == GateSpec::Kind::Layered;
  for (const auto& m : s.modes)
    if (!modes.count(m)) fail("unknown mode " + m);
  if (layered && s.layers.empty()) fail("layered gate needs a nonempty layers list");
  if (!layered && !s.layers.empty()) fail("layers given for a non-layered gate");
  for (int l : s.layers)
    if (l < 1) fail("layers must be positive");
  if (layered && s.noise != "depolarizing") fail("layered circuits use depolarizing noise");
  for (int d : s.d)
    if (d < 2) fail("d must be at least 2");
  double p0_min = 0.0;
  if (s.protocol == Protocol::Ib) p0_min = s.noise == "dephasing" ? 0.5 : 0.25;
  for (double p : s.p0)
    if (!(p >= p0_min && p <= 1.0)) fail(fmt::format("p0 = {} outside [{}, 1] for {} {}", p, p0_min, protocol_name(s.protocol), s.noise));
  if (s.keep == "threshold" && !(s.keep_value >= 0 && s.keep_value <= 1)) fail("keep threshold must lie in [0, 1]");
  if (s.keep == "drop-worst" && s.keep_value < 0) fail("drop_worst must be nonnegative");
  if (s.p_relative) {
    if (s.protocol != Protocol::Gb) fail("p_relative applies to gb only");
    for (int d : s.d)
      if (d != 2) fail("noisy cSWAPs need d = 2");
    for (double r : *s.p_relative)
      for (double p : s.p0)
        if (!(r >= 0 && r * (1 - p) <= 1)) fail(fmt::format("p_relative = {} invalid at p0 = {}", r, p));
  }
  for (const auto& a : s.aux) {
    if (a.state == AuxSpec::State::Alternating && s.protocol != Protocol::Nested) fail("alternating auxiliaries need nested");
    if (a.state == AuxSpec::State::Bell && s.protocol == Protocol::Mb) fail("mb auxiliaries are single-register states");
    if (s.protocol == Protocol::Ib && (a.state != AuxSpec::State::Auto || a.measure != AuxSpec::Measure::Default))
      fail("ib has no auxiliary register");
    if (s.protocol == Protocol::Nested && a.measure != AuxSpec::Measure::Default && a.measure != AuxSpec::Measure::Ideal)
      fail("nested projects onto U|phi_k>");
    if (a.state == AuxSpec::State::Bell && a.measure != AuxSpec::Measure::Default && a.measure != AuxSpec::Measure::Ideal &&
        a.measure != AuxSpec::Measure::Same)
      fail("bell auxiliaries take ideal or same measurements");
  }
  switch (s.protocol) {
    case Protocol::Gb: break;
    case Protocol::Nested:
      if (s.n.empty()) fail("nested needs n");
      for (int n : s.n)
        if (n < 1) fail("n must be positive");
      for (const auto& m : s.modes)
        if (m != "probabilistic") fail("nested is probabilistic only");
      break;
    case Protocol::Mb:
      if (s.gate.kind == GateSpec::Kind::Matrix || s.gate.name == "I") fail("mb gates: T, cNOT, CZ, H, layered");
      for (int d : s.d)
        if (d != 2) fail("mb needs d = 2");
      for (const auto& m : s.modes)
        if (m == "quasi-deterministic") fail("mb offers probabilistic and deterministic modes");
      if (s.scope != "computation" && s.scope != "all-qubits") fail("scope must be computation or all-qubits");
      if (s.variant != "a" && s.variant != "b") fail("variant must be a or b");
      if (s.propagation != "density" && s.propagation != "trajectories") fail("propagation must be density or trajectories");
      if (s.samples < 1) fail("samples must be positive");
      break;
    case Protocol::Ib:
      if (layered) fail("ib does not take layered gates");
      for (const auto& m : s.modes)
        if (m == "quasi-deterministic") fail("ib offers probabilistic and deterministic modes");
      break;
  }
  if (s.protocol != Protocol::Nested && !s.n.empty()) fail("n applies to nested only");
}

std::vector<Point> enumerate(const ExperimentConfig& cfg) {
  std::vector<Point> pts;
  for (const auto& s : cfg.sweeps) {
    std::vector<int> layers = s.layers.empty() ? std::vector<int>{0} : s.layers;
    std::vector<std::optional<double>> prels{std::nullopt};
    if (s.p_relative) {
      prels.clear();
      for (double r : *s.p_relative) prels.emplace_back(r);
    }
    std::vector<int> ns = s.protocol == Protocol::Nested ? s.n : std::vector<int>{0};
    for (int l : layers)
      for (const auto& pr : prels)
        for (double p0 : s.p0)
          for (int d : s.d)
            for (int n : ns)
              for (const auto& mode : s.modes)
                for (const auto& a : s.aux) {
                  Point pt{&s, l, pr, p0, d, n, mode, a, {}};
                  ResultRow& r = pt.row;
                  r.protocol = protocol_name(s.protocol);
                  r.gate = gate_label(s, l);
                  r.noise_kind = noise_label(s, pr);
                  r.p0 = p0;
                  r.d = s.protocol == Protocol::Nested ? std::lround(nested_register_count(d, n)) : d;
                  std::string al = a.label();
                  r.mode = al.empty() ? mode : mode + "/" + al;
                  r.seed = cfg.seed;
                  pts.push_back(std::move(pt));
                }
  }
  return pts;
}

int natural_compare(const std::string& a, const std::string& b) {
  size_t i = 0, j = 0;
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  while (i < a.size() && j < b.size()) {
    if (digit(a[i]) && digit(b[j])) {
      size_t i2 = i, j2 = j;
      while (i2 < a.size() && digit(a[i2])) ++i2;
      while (j2 < b.size() && digit(b[j2])) ++j2;
      std::string x = a.substr(i, i2 - i), y = b.substr(j, j2 - j);
      x.erase(0, std::min(x.find_first_not_of('0'), x.size()));
      y.erase(0, std::min(y.find_first_not_of('0'), y.size()));
      if (x.size() != y.size()) return x.size() < y.size() ? -1 : 1;
      if (int c = x.compare(y)) return c < 0 ? -1 : 1;
      i = i2;
      j = j2;
    } else {
      if (a[i] != b[j]) return a[i] < b[j] ? -1 : 1;
      ++i;
      ++j;
    }
  }
  if (i < a.size()) return 1;
  if (j < b.size()) return -1;
  return 0;
}

bool row_less(const ResultRow& x, const ResultRow& y) {
  if (int c = x.protocol.compare(y.protocol)) return c < 0;
  if (int c = natural_compare(x.gate, y.gate)) return c < 0;
  if (int c = natural_compare(x.noise_kind, y.noise_kind)) return c < 0;
  if (x.p0 != y.p0) return x.p0 < y.p0;
  if (x.d != y.d) return x.d < y.d;
  return natural_compare(x.mode, y.mode) < 0;
}

bool same_key(const ResultRow& x, const ResultRow& y) { return !row_less(x, y) && !row_less(y, x); }

std::string num(double x) { return fmt::format("{:.17g}", x); }

void evaluate(Point& pt, bool timing) {
  auto t0 = std::chrono::steady_clock::now();
  FidelityReport rep;
  double err = 0;
  switch (pt.sweep->protocol) {
    case Protocol::Gb: rep = eval_gb(pt); break;
    case Protocol::Nested: rep = eval_nested(pt); break;
    case Protocol::Mb: rep = eval_mb(pt, pt.row.seed, err); break;
    case Protocol::Ib: rep = eval_ib(pt); break;
  }
  ResultRow& r = pt.row;
  r.f_incoherent = rep.f_incoherent;
  r.f_coherent = rep.f_coherent;
  r.ratio = rep.ratio;
  r.ratio_infinite = rep.ratio_infinite;
  r.success_probability = rep.success_probability;
  if (pt.sweep->protocol == Protocol::Mb) r.statistical_error = err;
  if (timing) r.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  for (double v : {r.f_incoherent, r.f_coherent, r.success_probability, r.statistical_error.value_or(0.0)})
    if (!std::isfinite(v)) throw std::runtime_error(fmt::format("non-finite result at {} {} p0={}", r.protocol, r.gate, r.p0));
  if (!r.ratio_infinite && !std::isfinite(r.ratio)) throw std::runtime_error("non-finite ratio");
}

// ------------------------------------------------------------------------------------------------
// Presets

struct Preset {
  const char* name;
  const char* description;
  bool monte_carlo;
  const char* config;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> p{
      {"fig3a-aux-bloch", "T gate, depolarizing p0 = 0.97, d = 2: auxiliary around the Bloch sphere, X-basis post-selection",
       false, R"({
  "protocol": "gb", "gate": "T", "noise": "depolarizing", "p0": 0.97, "d": 2, "modes": "probabilistic",
  "aux_grid": {"theta": {"from": 0, "to": 3.141592653589793, "count": 9},
               "phi": {"from": 0, "to": 5.497787143782138, "count": 8}, "measure": "x"}
})"},
      {"fig3b-aux-phase", "T gate, depolarizing p0 = 0.97, d = 2: equatorial auxiliary against post-selection phase", false,
       R"({
  "protocol": "gb", "gate": "T", "noise": "depolarizing", "p0": 0.97, "d": 2, "modes": "probabilistic",
  "aux_grid": {"theta": 1.5707963267948966, "phi": {"from": 0, "to": 5.497787143782138, "count": 8},
               "measure": "phase", "measure_phase": {"from": 0, "to": 5.497787143782138, "count": 8}}
})"},
      {"fig4-T-dephasing", "T gate, dephasing: three modes over p0 and d = 2..5 with a fully sensitive auxiliary", false,
       R"({
  "protocol": "gb", "gate": "T", "noise": "dephasing",
  "p0": [0.75, 0.8, 0.85, 0.9, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999], "d": [2, 3, 4, 5],
  "modes": ["probabilistic", "quasi-deterministic", "deterministic"], "keep": {"drop_worst": 1}
})"},
      {"fig4-cNOT-depolarizing",
       "cNOT, two-qubit depolarizing, Bell auxiliary: probabilistic d = 2..5, quasi-deterministic and deterministic d = 2..3",
       false, R"({
  "experiments": [
    {"protocol": "gb", "gate": "cNOT", "noise": "depolarizing",
     "p0": [0.75, 0.8, 0.85, 0.9, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999], "d": [2, 3, 4, 5], "modes": "probabilistic"},
    {"protocol": "gb", "gate": "cNOT", "noise": "depolarizing",
     "p0": [0.75, 0.8, 0.85, 0.9, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999], "d": [2, 3],
     "modes": ["quasi-deterministic", "deterministic"], "keep": {"drop_worst": 1}}
  ]
})"},
      {"fig6-noisy-cswap", "Layered cNOT+T circuits, quasi-deterministic d = 2, noisy cSWAPs with p_relative 0, 1, 10", false,
       R"({
  "protocol": "gb", "gate": "layered", "layers": [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 35, 40, 45, 50],
  "noise": "depolarizing", "p0": 0.9997, "d": 2, "modes": "quasi-deterministic", "keep": {"drop_worst": 1},
  "aux": "zero", "p_relative": [0, 1, 10]
})"},
      {"fig7-nested", "Nested cNOT, depolarizing: Bell, alternating and |++> auxiliaries over p0 (n = 12) and n (p0 = 0.9)",
       false, R"({
  "experiments": [
    {"protocol": "nested", "gate": "cNOT", "noise": "depolarizing",
     "p0": [0.75, 0.8, 0.85, 0.875, 0.9, 0.925, 0.95, 0.975, 0.99], "d": 2, "n": 12,
     "aux": ["bell", "alternating", "plus"]},
    {"protocol": "nested", "gate": "cNOT", "noise": "depolarizing", "p0": 0.9, "d": 2, "n": {"from": 1, "to": 11},
     "aux": ["bell", "alternating", "plus"]}
  ]
})"},
      {"fig9-mb", "MB T and cNOT, depolarizing on every computation vertex, d = 2, probabilistic and deterministic", true,
       R"({
  "experiments": [
    {"protocol": "mb", "gate": "T", "noise": "depolarizing", "p0": [0.9, 0.95, 0.97, 0.98, 0.99, 0.995, 0.999],
     "d": 2, "modes": ["probabilistic", "deterministic"], "scope": "computation", "samples": 8},
    {"protocol": "mb", "gate": "cNOT", "noise": "depolarizing", "p0": [0.9, 0.95, 0.97, 0.98, 0.99, 0.995, 0.999],
     "d": 2, "modes": ["probabilistic", "deterministic"], "scope": "computation", "samples": 4}
  ]
})"},
      {"fig10-mb-noisy-cswap", "MB layered cNOT+T circuits with depolarizing on every vertex including both cSWAPs", true,
       R"({
  "protocol": "mb", "gate": "layered", "layers": [1, 2, 4, 8, 16, 24, 32, 48, 64], "noise": "depolarizing",
  "p0": [0.999, 0.9999], "d": 2, "modes": "probabilistic", "aux": "plus", "scope": "all-qubits", "samples": 4
})"},
      {"fig11-ib", "IB T gate (depolarizing) and cNOT (dephasing), d = 2..5, probabilistic and deterministic", false,
       R"({
  "experiments": [
    {"protocol": "ib", "gate": "T", "noise": "depolarizing",
     "p0": [0.75, 0.8, 0.85, 0.9, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999], "d": [2, 3, 4, 5],
     "modes": ["probabilistic", "deterministic"]},
    {"protocol": "ib", "gate": "cNOT", "noise": "dephasing",
     "p0": [0.75, 0.8, 0.85, 0.9, 0.925, 0.95, 0.975, 0.99, 0.995, 0.999], "d": [2, 3, 4, 5],
     "modes": ["probabilistic", "deterministic"]}
  ]
})"},
  };
  return p;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (name == p.name) return p;
  throw ValidationError("unknown preset " + name);
}

}  // namespace

std::string AuxSpec::label() const {
  std::string s;
  switch (state) {
    case State::Auto: break;
    case State::Named: s = "aux=" + name; break;
    case State::Bell: s = "aux=bell"; break;
    case State::Alternating: s = "aux=alternating"; break;
    case State::Bloch: s = fmt::format("aux=bloch:{:.6g}:{:.6g}", theta, phi); break;
  }
  std::string m;
  switch (measure) {
    case Measure::Default: break;
    case Measure::Ideal: m = "meas=ideal"; break;
    case Measure::Same: m = "meas=same"; break;
    case Measure::XBasis: m = "meas=x"; break;
    case Measure::Phase: m = fmt::format("meas=phase:{:.6g}", measure_phase); break;
  }
  if (!s.empty() && !m.empty()) return s + "/" + m;
  return s + m;
}

int SweepSpec::qubits() const {
  if (gate.kind == GateSpec::Kind::Layered) return 2;
  if (gate.kind == GateSpec::Kind::Matrix) return static_cast<int>(std::lround(std::log2(double(gate.matrix.rows()))));
  return gate.name == "cNOT" || gate.name == "CZ" ? 2 : 1;
}

long SweepSpec::points() const {
  long n_count = protocol == Protocol::Nested ? static_cast<long>(n.size()) : 1;
  long l_count = gate.kind == GateSpec::Kind::Layered ? static_cast<long>(layers.size()) : 1;
  long r_count = p_relative ? static_cast<long>(p_relative->size()) : 1;
  return static_cast<long>(p0.size() * d.size() * modes.size() * aux.size()) * n_count * l_count * r_count;
}

void ExperimentConfig::validate() const {
  if (sweeps.empty()) fail("no experiments");
  if (jobs < 1) fail("jobs must be at least 1");
  for (const auto& s : sweeps) {
    check_sweep(s);
    if (s.points() == 0) fail("empty grid");
  }
  auto pts = enumerate(*this);
  std::vector<ResultRow> keys;
  for (const auto& p : pts) keys.push_back(p.row);
  sort_rows(keys);
  for (size_t i = 1; i < keys.size(); ++i)
    if (same_key(keys[i - 1], keys[i]))
      fail(fmt::format("duplicate sweep point {} {} {} p0={} d={} {}", keys[i].protocol, keys[i].gate, keys[i].noise_kind,
                       keys[i].p0, keys[i].d, keys[i].mode));
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("parse error: ") + e.what());
  }
  if (!j.is_object()) fail("top level must be an object");
  ExperimentConfig c;
  try {
    c.name = j.value("name", std::string());
    c.seed = j.value("seed", std::uint64_t{1});
    c.jobs = j.value("jobs", 1);
    c.out = j.value("out", std::string());
    c.timing = j.value("timing", false);
    std::string fmt_name = j.value("format", std::string("csv"));
    if (fmt_name == "csv")
      c.format = OutputFormat::Csv;
    else if (fmt_name == "json")
      c.format = OutputFormat::Json;
    else
      fail("format must be csv or json");
    if (j.contains("experiments")) {
      if (!j["experiments"].is_array()) fail("experiments must be an array");
      for (const auto& e : j["experiments"]) c.sweeps.push_back(parse_sweep(e));
    } else {
      json sweep = j;
      for (const char* k : {"name", "seed", "jobs", "out", "timing", "format"}) sweep.erase(k);
      c.sweeps.push_back(parse_sweep(sweep));
    }
  } catch (const json::exception& e) {
    fail(std::string("bad value: ") + e.what());
  }
  for (const auto& s : c.sweeps)
    if (s.protocol == Protocol::Mb) c.monte_carlo = true;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<PresetInfo> list_presets() {
  std::vector<PresetInfo> out;
  for (const auto& p : presets()) out.push_back({p.name, p.description, p.monte_carlo});
  return out;
}

std::string preset_json(const std::string& name) { return find_preset(name).config; }

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c = parse_config(find_preset(name).config);
  c.name = name;
  return c;
}

std::vector<ResultRow> run_sweeps(const ExperimentConfig& config) {
  config.validate();
  std::vector<Point> pts = enumerate(config);
  std::vector<std::exception_ptr> errors(pts.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < pts.size(); i = next++) {
      try {
        evaluate(pts[i], config.timing);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  int jobs = std::min<int>(config.jobs, static_cast<int>(pts.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<ResultRow> rows;
  for (auto& p : pts) rows.push_back(std::move(p.row));
  sort_rows(rows);
  return rows;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config, std::ostream& fallback) {
  std::vector<ResultRow> rows = run_sweeps(config);
  std::string text = format_rows(rows, config.format);
  if (config.out.empty()) {
    fallback << text;
  } else {
    std::ofstream out(config.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + config.out);
    out << text;
  }
  return rows;
}

void sort_rows(std::vector<ResultRow>& rows) { std::stable_sort(rows.begin(), rows.end(), row_less); }

void write_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  out << "# schema_version=" << kSchemaVersion << "\n";
  out << "protocol,gate,noise_kind,p0,d,mode,f_incoherent,f_coherent,ratio,success_probability,seed,wall_time_ms,"
         "statistical_error\n";
  for (const auto& r : rows) {
    out << r.protocol << ',' << r.gate << ',' << r.noise_kind << ',' << num(r.p0) << ',' << r.d << ',' << r.mode << ','
        << num(r.f_incoherent) << ',' << num(r.f_coherent) << ',' << (r.ratio_infinite ? "inf" : num(r.ratio)) << ','
        << num(r.success_probability) << ',' << r.seed << ',' << num(r.wall_time_ms) << ','
        << (r.statistical_error ? num(*r.statistical_error) : "") << "\n";
  }
}

void write_json(const std::vector<ResultRow>& rows, std::ostream& out) {
  auto str = [](const std::string& s) { return json(s).dump(); };
  out << "[";
  for (size_t i = 0; i < rows.size(); ++i) {
    const ResultRow& r = rows[i];
    out << (i ? ",\n  " : "\n  ") << "{\"protocol\": " << str(r.protocol) << ", \"gate\": " << str(r.gate)
        << ", \"noise_kind\": " << str(r.noise_kind) << ", \"p0\": " << num(r.p0) << ", \"d\": " << r.d
        << ", \"mode\": " << str(r.mode) << ", \"f_incoherent\": " << num(r.f_incoherent)
        << ", \"f_coherent\": " << num(r.f_coherent) << ", \"ratio\": " << (r.ratio_infinite ? "\"inf\"" : num(r.ratio))
        << ", \"success_probability\": " << num(r.success_probability) << ", \"seed\": " << r.seed
        << ", \"wall_time_ms\": " << num(r.wall_time_ms)
        << ", \"statistical_error\": " << (r.statistical_error ? num(*r.statistical_error) : "null") << "}";
  }
  out << (rows.empty() ? "]\n" : "\n]\n");
}

std::string format_rows(const std::vector<ResultRow>& rows, OutputFormat format) {
  std::ostringstream ss;
  if (format == OutputFormat::Csv)
    write_csv(rows, ss);
  else
    write_json(rows, ss);
  return ss.str();
}

}  // namespace sqem
