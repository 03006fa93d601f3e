#pragma once

#include "sqem/gb.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sqem {

// GF(2) sum of measurement outcome bits, kept as a sorted set of vertex ids.
class Parity {
 public:
  Parity() = default;
  explicit Parity(std::vector<int> vertices);
  static Parity of(int v) { return Parity({v}); }

  Parity& operator^=(const Parity& o);
  friend Parity operator^(Parity a, const Parity& b) { return a ^= b; }
  bool operator==(const Parity& o) const { return v_ == o.v_; }

  // outcomes[v] must be 0 or 1 for every vertex in the set.
  int eval(const std::vector<int8_t>& outcomes) const;
  bool contains(int v) const;
  bool empty() const { return v_.empty(); }
  const std::vector<int>& vertices() const { return v_; }
  Parity remapped(const std::vector<int>& map) const;

 private:
  std::vector<int> v_;
};

struct GraphSpec {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> inputs;   // one per logical wire
  std::vector<int> outputs;  // one per logical wire

  void validate() const;
  std::vector<std::vector<int>> adjacency() const;
};

// XY: basis {(|0> +- e^{i theta}|1>)/sqrt2}, theta = pi * angle_pi * (-1)^sign.
enum class MeasBasis { X, Y, Z, XY };

struct Measurement {
  int vertex = 0;
  MeasBasis basis = MeasBasis::X;
  double angle_pi = 0.0;
  Parity sign;

  double angle(const std::vector<int8_t>& outcomes) const;
  // Basis vector for outcome s (0 = +).
  StateVector ket(const std::vector<int8_t>& outcomes, int s) const;
};

// The output carries X^x Z^z relative to the ideal action.
struct Byproduct {
  Parity x;
  Parity z;
};

enum class VertexTag : std::uint8_t { Input, Computation, Cswap };

struct MeasurementPattern {
  std::string name;
  GraphSpec graph;
  std::vector<Measurement> measurements;  // execution order
  std::vector<Byproduct> byproducts;      // one per output
  std::vector<VertexTag> tags;            // one per vertex

  // Every non-output vertex measured exactly once; sign and byproduct terms refer to earlier outcomes.
  void validate() const;
  int wires() const { return static_cast<int>(graph.inputs.size()); }
};

// Versioned text format; angles are written in units of pi with round-trip precision.
void write_pattern(const MeasurementPattern& p, std::ostream& out);
MeasurementPattern read_pattern(std::istream& in);
MeasurementPattern load_pattern(const std::string& path);
void save_pattern(const MeasurementPattern& p, const std::string& path);

// Circuit-to-pattern compiler over {Rz, H, CZ, phase gadget} with Pauli-frame tracking.
class PatternBuilder {
 public:
  explicit PatternBuilder(int wires);

  void set_tag(VertexTag t) { tag_ = t; }
  void rz(int w, double angle_pi);  // diag(1, e^{i pi a}), merged into the next H
  void h(int w);
  void cz(int a, int b);
  // exp(i pi a p) on basis states whose parity over `wires` is p (X-measured hub, adaptive leaf).
  void phase_gadget(const std::vector<int>& wires, double angle_pi);
  void append(const MeasurementPattern& p, const std::vector<int>& wires, VertexTag tag);
  // Realizes a pending rotation on w as J(a) J(0), leaving the current vertex as the logical output.
  void realize(int w);
  MeasurementPattern finish(std::string name);

  int current(int w) const { return current_[w]; }
  int vertex_count() const { return static_cast<int>(tags_.size()); }

 private:
  int new_vertex();
  void flush(int w);
  void measure_xy(int v, double angle_pi, Parity sign);

  VertexTag tag_ = VertexTag::Computation;
  std::vector<VertexTag> tags_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<Measurement> meas_;
  std::vector<int> inputs_, current_;
  std::vector<double> pending_;
  std::vector<Parity> fx_, fz_;
};

// Gate list over m wires used both for patterns and for the reference unitary.
struct MbOp {
  enum class Kind { Rz, H, Cz, Gadget };
  Kind kind;
  std::vector<int> wires;
  double angle_pi = 0.0;
};

struct MbComputation {
  int m = 1;
  std::vector<MbOp> ops;

  ComplexMatrix unitary() const;
  void emit(PatternBuilder& b, const std::vector<int>& wires) const;
};

MbComputation mb_t_gate();
MbComputation mb_cnot();  // control is wire 0
MbComputation mb_rotation_x(double mu);
// n layers of CNOT(0 -> 1) followed by T on both wires.
MbComputation mb_layers(int n_layers);
// Clifford+T cSWAP with the control on wire 0; phase_gadgets selects the T-depth-1 form.
MbComputation cswap_circuit(bool phase_gadgets);

MeasurementPattern compile(const MbComputation& c, const std::string& name, VertexTag tag = VertexTag::Computation);

// 3-vertex line: X on the first vertex, adaptive R(-mu) on the second; output U = exp(-i mu X / 2).
MeasurementPattern mb_rotation_pattern(double mu);

enum class CswapVariant { A, B };
MeasurementPattern generate_cswap_pattern(CswapVariant v);
// Frozen pattern read from the data directory.
MeasurementPattern mb_cswap_pattern(CswapVariant v);
std::string cswap_pattern_path(CswapVariant v);

// ---------------------------------------------------------------------------------------------
// Simulation

// Noise per vertex: index into `channels` or -1.
struct VertexNoise {
  std::vector<KrausChannel> channels;
  std::vector<int> channel_of;

  static VertexNoise none(int n) { return {{}, std::vector<int>(n, -1)}; }
  static VertexNoise uniform(int n, const KrausChannel& ch) { return {{ch}, std::vector<int>(n, 0)}; }
  const KrausChannel* at(int v) const;
};

// Active-set state. External qubits (labels < 0) sit alongside graph vertices and are never measured.
class MbState {
 public:
  enum class Repr { Density, Pure };

  MbState(const GraphSpec& graph, const StateVector& initial, std::vector<int> labels, Repr repr,
          VertexNoise noise, int cap);

  Repr repr() const { return repr_; }
  const std::vector<int>& labels() const { return labels_; }
  int active() const { return static_cast<int>(labels_.size()); }
  double trace() const;
  // Density matrix of the active qubits in `labels()` order (pure states are expanded).
  ComplexMatrix density() const;
  const StateVector& vector() const { return psi_; }
  bool measured(int v) const { return measured_[v] != 0; }

  // Adds |+> for v and CZ to every active neighbor.
  void materialize(int v);
  void materialize_all();
  // Materializes the neighbors of v and applies v's noise once. Pure states sample a Kraus branch.
  void settle(int v, std::mt19937_64* rng);
  // Projects v onto `ket` and drops it. Returns the trace after projection.
  double project(int v, const StateVector& ket);
  // Unnormalized probability of finding v in `ket`, without changing the state.
  double probability(int v, const StateVector& ket) const;
  void normalize();
  void apply_pauli(int v, int x, int z);
  // Moves the listed labels to the front in the given order; others keep their relative order.
  void reorder(const std::vector<int>& front);

 private:
  int position(int label) const;
  void add_plus(int label);
  void cz_positions(int i, int j);

  const GraphSpec* graph_;
  std::vector<std::vector<int>> adj_;
  Repr repr_;
  VertexNoise noise_;
  int cap_;
  std::vector<int> labels_;
  ComplexMatrix rho_;
  StateVector psi_;
  std::vector<int8_t> materialized_, measured_, noised_;
};

enum class OutcomeMode { Enumerate, Sample, Fix };

struct PatternRun {
  MbState state;
  std::vector<int8_t> outcomes;  // by vertex; -1 for unmeasured
  double weight;                 // probability of this branch (1 for sampled branches)
};

struct RunOptions {
  OutcomeMode mode = OutcomeMode::Enumerate;
  std::vector<int8_t> fixed;  // outcome per vertex for Fix
  std::mt19937_64* rng = nullptr;
  bool full_materialization = false;
  bool fold_byproducts = true;  // apply the byproduct correction to the outputs
};

// Executes the pattern. Outputs are moved to the front after external qubits: [externals..., outputs...].
std::vector<PatternRun> run_pattern(const MeasurementPattern& p, MbState state, const RunOptions& opt);

// ---------------------------------------------------------------------------------------------
// Protocol

enum class NoiseScope { ComputationOnly, AllQubits, ComputationOutputs };
enum class Propagation { Density, Trajectories };

struct MbConfig {
  int d = 2;
  int m = 1;
  MbComputation u;
  KrausChannel noise;
  NoiseScope scope = NoiseScope::ComputationOnly;
  CswapVariant variant = CswapVariant::B;
  StateVector aux_state;       // default |+>^m
  StateVector aux_meas_state;  // default |+>^m
  GbMode mode = GbMode::Probabilistic;
  Propagation propagation = Propagation::Density;
  int samples = 32;  // ancilla-outcome samples (density) or trajectories
  std::uint64_t seed = 1;
  int cap = 12;

  void validate() const;
};

struct MbResult {
  std::vector<ProtocolOutcome> outcomes;  // (control, aux) outcomes; the designated one first
  FidelityReport report;
  double f_error = 0.0;   // standard error of the coherent fidelity
  double f0_error = 0.0;  // standard error of the incoherent fidelity
};

MeasurementPattern mb_protocol_pattern(const MbConfig& config);
// Incoherent fidelity of the computation pattern alone under the same noise scope.
std::pair<double, double> mb_incoherent_fidelity(const MbConfig& config, const StateVector& input);
MbResult run_mb_sqem(const MbConfig& config, const StateVector& input);

// Two noisy Bell pairs in superposition; 1- or 2-qubit noise on each pair (1-qubit acts on the b qubit).
enum class TeleportReadout { Bell, LocalX };
struct TeleportResult {
  ProtocolOutcome outcome;  // control +, spectator pair Phi+ (Bell) or even X parity (LocalX)
  FidelityReport report;
};
TeleportResult mb_teleport(const KrausChannel& bell_noise, TeleportReadout readout = TeleportReadout::Bell);

}  // namespace sqem
