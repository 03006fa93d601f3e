#include "sqem/mb.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace sqem {

namespace {

int log2_exact(long n) {
  int k = 0;
  while ((1L << k) < n) ++k;
  if ((1L << k) != n) throw ValidationError("dimension is not a power of two");
  return k;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Wraps an angle in units of pi into (-1, 1].
double wrap_pi(double a) {
  double r = std::fmod(a, 2.0);
  if (r <= -1) r += 2;
  if (r > 1) r -= 2;
  return r;
}

// new position p holds old position perm[p]
long permute_index(long x, const std::vector<int>& perm) {
  int n = static_cast<int>(perm.size());
  long y = 0;
  for (int p = 0; p < n; ++p)
    if ((x >> (n - 1 - p)) & 1) y |= 1L << (n - 1 - perm[p]);
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Parity

Parity::Parity(std::vector<int> vertices) {
  std::sort(vertices.begin(), vertices.end());
  for (size_t i = 0; i < vertices.size();) {
    size_t j = i;
    while (j < vertices.size() && vertices[j] == vertices[i]) ++j;
    if ((j - i) % 2) v_.push_back(vertices[i]);
    i = j;
  }
}

Parity& Parity::operator^=(const Parity& o) {
  std::vector<int> out;
  std::set_symmetric_difference(v_.begin(), v_.end(), o.v_.begin(), o.v_.end(), std::back_inserter(out));
  v_ = std::move(out);
  return *this;
}

int Parity::eval(const std::vector<int8_t>& outcomes) const {
  int s = 0;
  for (int v : v_) {
    if (v < 0 || v >= static_cast<int>(outcomes.size()) || outcomes[v] < 0)
      throw ValidationError(fmt::format("outcome of vertex {} is not available", v));
    s ^= outcomes[v];
  }
  return s;
}

bool Parity::contains(int v) const { return std::binary_search(v_.begin(), v_.end(), v); }

Parity Parity::remapped(const std::vector<int>& map) const {
  std::vector<int> out;
  for (int v : v_) out.push_back(map.at(v));
  return Parity(std::move(out));
}

// ---------------------------------------------------------------------------------------------
// Graph and pattern

void GraphSpec::validate() const {
  if (n <= 0) throw ValidationError("graph needs at least one vertex");
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw ValidationError("edge references a missing vertex");
    if (a == b) throw ValidationError("self-loop");
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) throw ValidationError("duplicate edge");
  }
  if (inputs.size() != outputs.size()) throw ValidationError("inputs and outputs differ in count");
  std::set<int> in(inputs.begin(), inputs.end()), out(outputs.begin(), outputs.end());
  if (in.size() != inputs.size() || out.size() != outputs.size()) throw ValidationError("repeated input or output");
  for (int v : inputs)
    if (v < 0 || v >= n || out.count(v)) throw ValidationError("bad input vertex");
  for (int v : outputs)
    if (v < 0 || v >= n) throw ValidationError("bad output vertex");
}

std::vector<std::vector<int>> GraphSpec::adjacency() const {
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& l : adj) std::sort(l.begin(), l.end());
  return adj;
}

double Measurement::angle(const std::vector<int8_t>& outcomes) const {
  switch (basis) {
    case MeasBasis::X:
    case MeasBasis::Z:
      return 0.0;
    case MeasBasis::Y:
      return (sign.eval(outcomes) ? -0.5 : 0.5) * M_PI;
    case MeasBasis::XY:
      break;
  }
  return (sign.eval(outcomes) ? -angle_pi : angle_pi) * M_PI;
}

StateVector Measurement::ket(const std::vector<int8_t>& outcomes, int s) const {
  if (basis == MeasBasis::Z) return s ? states::one() : states::zero();
  StateVector k(2);
  k << 1, std::polar(s ? -1.0 : 1.0, angle(outcomes));
  return k / std::sqrt(2.0);
}

void MeasurementPattern::validate() const {
  graph.validate();
  if (static_cast<int>(tags.size()) != graph.n) throw ValidationError("one tag per vertex required");
  if (byproducts.size() != graph.outputs.size()) throw ValidationError("one byproduct per output required");
  std::vector<int> order(graph.n, -1);
  for (size_t k = 0; k < measurements.size(); ++k) {
    int v = measurements[k].vertex;
    if (v < 0 || v >= graph.n) throw ValidationError("measurement of a missing vertex");
    if (order[v] >= 0) throw ValidationError(fmt::format("vertex {} measured twice", v));
    order[v] = static_cast<int>(k);
  }
  for (int o : graph.outputs)
    if (order[o] >= 0) throw ValidationError("output vertex is measured");
  int measured = static_cast<int>(measurements.size());
  if (measured + static_cast<int>(graph.outputs.size()) != graph.n)
    throw ValidationError("every non-output vertex must be measured");
  for (size_t k = 0; k < measurements.size(); ++k)
    for (int u : measurements[k].sign.vertices())
      if (u < 0 || u >= graph.n || order[u] < 0 || order[u] >= static_cast<int>(k))
        throw ValidationError(fmt::format("angle of vertex {} depends on a later outcome", measurements[k].vertex));
  for (const auto& b : byproducts)
    for (const Parity* p : {&b.x, &b.z})
      for (int u : p->vertices())
        if (u < 0 || u >= graph.n || order[u] < 0) throw ValidationError("byproduct refers to an unmeasured vertex");
}

// ---------------------------------------------------------------------------------------------
// Pattern files

namespace {

const char* basis_name(MeasBasis b) {
  switch (b) {
    case MeasBasis::X: return "X";
    case MeasBasis::Y: return "Y";
    case MeasBasis::Z: return "Z";
    case MeasBasis::XY: return "XY";
  }
  return "?";
}

char tag_char(VertexTag t) {
  switch (t) {
    case VertexTag::Input: return 'I';
    case VertexTag::Computation: return 'C';
    case VertexTag::Cswap: return 'S';
  }
  return '?';
}

void write_list(std::ostream& out, const std::vector<int>& v) {
  out << ' ' << v.size();
  for (int x : v) out << ' ' << x;
}

std::vector<int> read_list(std::istream& in) {
  long k = -1;
  if (!(in >> k) || k < 0) throw ValidationError("pattern file: bad list length");
  std::vector<int> v(k);
  for (auto& x : v)
    if (!(in >> x)) throw ValidationError("pattern file: truncated list");
  return v;
}

}  // namespace

void write_pattern(const MeasurementPattern& p, std::ostream& out) {
  out << "sqem-pattern 1\n";
  out << "name " << p.name << '\n';
  out << "vertices " << p.graph.n << '\n';
  out << "inputs";
  write_list(out, p.graph.inputs);
  out << "\noutputs";
  write_list(out, p.graph.outputs);
  out << "\ntags ";
  for (auto t : p.tags) out << tag_char(t);
  out << "\nedges " << p.graph.edges.size() << '\n';
  for (auto [a, b] : p.graph.edges) out << "e " << a << ' ' << b << '\n';
  out << "measurements " << p.measurements.size() << '\n';
  for (const auto& m : p.measurements) {
    out << "m " << m.vertex << ' ' << basis_name(m.basis) << ' ' << fmt::format("{:.17g}", m.angle_pi);
    write_list(out, m.sign.vertices());
    out << '\n';
  }
  for (size_t k = 0; k < p.byproducts.size(); ++k) {
    out << "b " << k << " x";
    write_list(out, p.byproducts[k].x.vertices());
    out << " z";
    write_list(out, p.byproducts[k].z.vertices());
    out << '\n';
  }
  out << "end\n";
}

MeasurementPattern read_pattern(std::istream& in) {
  auto expect = [&](const std::string& word) {
    std::string w;
    if (!(in >> w) || w != word) throw ValidationError(fmt::format("pattern file: expected '{}'", word));
  };
  expect("sqem-pattern");
  int version = 0;
  in >> version;
  if (version != 1) throw ValidationError(fmt::format("pattern file: unsupported version {}", version));
  MeasurementPattern p;
  expect("name");
  in >> p.name;
  expect("vertices");
  in >> p.graph.n;
  expect("inputs");
  p.graph.inputs = read_list(in);
  expect("outputs");
  p.graph.outputs = read_list(in);
  expect("tags");
  std::string tags;
  in >> tags;
  for (char c : tags) {
    if (c == 'I') p.tags.push_back(VertexTag::Input);
    else if (c == 'C') p.tags.push_back(VertexTag::Computation);
    else if (c == 'S') p.tags.push_back(VertexTag::Cswap);
    else throw ValidationError("pattern file: bad tag");
  }
  expect("edges");
  long ne = 0;
  in >> ne;
  for (long k = 0; k < ne; ++k) {
    expect("e");
    int a, b;
    if (!(in >> a >> b)) throw ValidationError("pattern file: bad edge");
    p.graph.edges.push_back({a, b});
  }
  expect("measurements");
  long nm = 0;
  in >> nm;
  for (long k = 0; k < nm; ++k) {
    expect("m");
    Measurement m;
    std::string basis, angle;
    if (!(in >> m.vertex >> basis >> angle)) throw ValidationError("pattern file: bad measurement");
    if (basis == "X") m.basis = MeasBasis::X;
    else if (basis == "Y") m.basis = MeasBasis::Y;
    else if (basis == "Z") m.basis = MeasBasis::Z;
    else if (basis == "XY") m.basis = MeasBasis::XY;
    else throw ValidationError("pattern file: bad basis " + basis);
    m.angle_pi = std::stod(angle);
    m.sign = Parity(read_list(in));
    p.measurements.push_back(std::move(m));
  }
  for (size_t k = 0; k < p.graph.outputs.size(); ++k) {
    expect("b");
    size_t idx;
    in >> idx;
    if (idx != k) throw ValidationError("pattern file: byproducts out of order");
    Byproduct b;
    expect("x");
    b.x = Parity(read_list(in));
    expect("z");
    b.z = Parity(read_list(in));
    p.byproducts.push_back(std::move(b));
  }
  expect("end");
  p.validate();
  return p;
}

MeasurementPattern load_pattern(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open pattern file " + path);
  return read_pattern(f);
}

void save_pattern(const MeasurementPattern& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write pattern file " + path);
  write_pattern(p, f);
}

// ---------------------------------------------------------------------------------------------
// Builder

PatternBuilder::PatternBuilder(int wires) {
  if (wires < 1) throw ValidationError("builder needs at least one wire");
  for (int w = 0; w < wires; ++w) {
    tags_.push_back(VertexTag::Input);
    inputs_.push_back(w);
  }
  current_ = inputs_;
  pending_.assign(wires, 0.0);
  fx_.assign(wires, Parity());
  fz_.assign(wires, Parity());
}

int PatternBuilder::new_vertex() {
  tags_.push_back(tag_);
  return static_cast<int>(tags_.size()) - 1;
}

void PatternBuilder::measure_xy(int v, double angle_pi, Parity sign) {
  double a = wrap_pi(angle_pi);
  Measurement m;
  m.vertex = v;
  if (a == 0.0) {
    m.basis = MeasBasis::X;
  } else {
    m.basis = MeasBasis::XY;
    m.angle_pi = a;
    if (a != 1.0) m.sign = std::move(sign);
  }
  meas_.push_back(std::move(m));
}

// One J(alpha) = H diag(1, e^{i alpha}) step carrying the pending rotation.
void PatternBuilder::flush(int w) {
  int v = current_[w];
  measure_xy(v, -pending_[w], fx_[w]);
  int u = new_vertex();
  edges_.push_back({v, u});
  Parity x = Parity::of(v) ^ fz_[w];
  fz_[w] = fx_[w];
  fx_[w] = std::move(x);
  current_[w] = u;
  pending_[w] = 0.0;
}

void PatternBuilder::realize(int w) {
  if (pending_.at(w) == 0.0) return;
  flush(w);
  flush(w);
}

void PatternBuilder::rz(int w, double angle_pi) { pending_.at(w) += angle_pi; }

void PatternBuilder::h(int w) { flush(w); }

namespace {

void toggle_edge(std::vector<std::pair<int, int>>& edges, int a, int b) {
  std::pair<int, int> e{std::min(a, b), std::max(a, b)};
  auto it = std::find_if(edges.begin(), edges.end(), [&](auto p) {
    return std::min(p.first, p.second) == e.first && std::max(p.first, p.second) == e.second;
  });
  if (it == edges.end())
    edges.push_back(e);
  else
    edges.erase(it);
}

}  // namespace

void PatternBuilder::cz(int a, int b) {
  if (a == b) throw ValidationError("cz needs two distinct wires");
  toggle_edge(edges_, current_.at(a), current_.at(b));
  fz_[b] ^= fx_[a];
  fz_[a] ^= fx_[b];
}

void PatternBuilder::phase_gadget(const std::vector<int>& wires, double angle_pi) {
  if (wires.empty()) throw ValidationError("phase gadget needs at least one wire");
  int hub = new_vertex();
  int leaf = new_vertex();
  Parity sign = Parity::of(hub);
  for (int w : wires) {
    toggle_edge(edges_, hub, current_.at(w));
    sign ^= fx_[w];
  }
  edges_.push_back({hub, leaf});
  measure_xy(hub, 0.0, {});
  measure_xy(leaf, -angle_pi, sign);
  for (int w : wires) fz_[w] ^= Parity::of(leaf);
}

void PatternBuilder::append(const MeasurementPattern& p, const std::vector<int>& wires, VertexTag tag) {
  p.validate();
  if (static_cast<int>(wires.size()) != p.wires()) throw ValidationError("append: wire count mismatch");
  // Pending rotations are realized as J(a) J(0) so that the appended pattern sees a plain wire.
  for (int w : wires) realize(w);
  VertexTag saved = tag_;
  tag_ = tag;
  std::vector<int> map(p.graph.n, -1);
  for (size_t k = 0; k < wires.size(); ++k) map[p.graph.inputs[k]] = current_[wires[k]];
  for (int v = 0; v < p.graph.n; ++v)
    if (map[v] < 0) map[v] = new_vertex();
  tag_ = saved;
  for (auto [a, b] : p.graph.edges) toggle_edge(edges_, map[a], map[b]);

  std::vector<int> basis_of(p.graph.n, -1);  // -1 for outputs
  for (const auto& m : p.measurements) basis_of[m.vertex] = static_cast<int>(m.basis);
  std::vector<int> out_index(p.graph.n, -1);
  for (size_t j = 0; j < p.graph.outputs.size(); ++j) out_index[p.graph.outputs[j]] = static_cast<int>(j);

  std::vector<Parity> sub(p.graph.n), flip(p.graph.n);
  std::vector<Byproduct> extra(p.graph.outputs.size());
  auto adj = p.graph.adjacency();
  for (size_t k = 0; k < wires.size(); ++k) {
    int in = p.graph.inputs[k];
    const Parity& x = fx_[wires[k]];
    const Parity& z = fz_[wires[k]];
    if (out_index[in] >= 0) {
      extra[out_index[in]].x ^= x;
      extra[out_index[in]].z ^= z;
    } else {
      auto b = static_cast<MeasBasis>(basis_of[in]);
      if (b != MeasBasis::Z) sub[in] ^= z;
      if (b == MeasBasis::XY || b == MeasBasis::Y) flip[in] ^= x;
      if (b == MeasBasis::Z) sub[in] ^= x;
    }
    for (int u : adj[in]) {
      if (out_index[u] >= 0)
        extra[out_index[u]].z ^= x;
      else if (static_cast<MeasBasis>(basis_of[u]) != MeasBasis::Z)
        sub[u] ^= x;
    }
  }
  auto translate = [&](const Parity& par) {
    Parity r;
    for (int u : par.vertices()) r ^= Parity::of(map[u]) ^ sub[u];
    return r;
  };
  for (const auto& m : p.measurements) {
    Measurement t = m;
    t.vertex = map[m.vertex];
    t.sign = translate(m.sign) ^ flip[m.vertex];
    if (t.basis != MeasBasis::XY && t.basis != MeasBasis::Y) t.sign = Parity();
    meas_.push_back(std::move(t));
  }
  for (size_t k = 0; k < wires.size(); ++k) {
    int w = wires[k];
    current_[w] = map[p.graph.outputs[k]];
    fx_[w] = translate(p.byproducts[k].x) ^ extra[k].x;
    fz_[w] = translate(p.byproducts[k].z) ^ extra[k].z;
  }
}

MeasurementPattern PatternBuilder::finish(std::string name) {
  for (size_t w = 0; w < current_.size(); ++w) {
    if (pending_[w] != 0.0 || current_[w] == inputs_[w]) {
      flush(static_cast<int>(w));
      flush(static_cast<int>(w));
    }
  }
  MeasurementPattern p;
  p.name = std::move(name);
  p.graph.n = vertex_count();
  p.graph.edges = edges_;
  std::sort(p.graph.edges.begin(), p.graph.edges.end());
  p.graph.inputs = inputs_;
  p.graph.outputs = current_;
  p.measurements = meas_;
  p.tags = tags_;
  for (size_t w = 0; w < current_.size(); ++w) p.byproducts.push_back({fx_[w], fz_[w]});
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------------------------
// Computations

ComplexMatrix MbComputation::unitary() const {
  long dim = 1L << m;
  auto shape = SubsystemShape::qubits(m);
  ComplexMatrix u = ComplexMatrix::Identity(dim, dim);
  auto bit = [&](long x, int w) { return static_cast<int>((x >> (m - 1 - w)) & 1); };
  for (const auto& op : ops) {
    for (int w : op.wires)
      if (w < 0 || w >= m) throw ValidationError("gate wire out of range");
    switch (op.kind) {
      case MbOp::Kind::H:
        u = embed(gates::H(), op.wires, shape) * u;
        break;
      case MbOp::Kind::Cz:
        u = embed(gates::CZ(), op.wires, shape) * u;
        break;
      case MbOp::Kind::Rz:
      case MbOp::Kind::Gadget: {
        Eigen::VectorXcd phase(dim);
        for (long x = 0; x < dim; ++x) {
          int p = 0;
          for (int w : op.wires) p ^= bit(x, w);
          phase(x) = p ? std::polar(1.0, M_PI * op.angle_pi) : cplx(1.0);
        }
        u = phase.asDiagonal() * u;
        break;
      }
    }
  }
  return u;
}

void MbComputation::emit(PatternBuilder& b, const std::vector<int>& wires) const {
  if (static_cast<int>(wires.size()) != m) throw ValidationError("emit: wire count mismatch");
  for (const auto& op : ops) {
    std::vector<int> w;
    for (int x : op.wires) w.push_back(wires.at(x));
    switch (op.kind) {
      case MbOp::Kind::Rz: b.rz(w[0], op.angle_pi); break;
      case MbOp::Kind::H: b.h(w[0]); break;
      case MbOp::Kind::Cz: b.cz(w[0], w[1]); break;
      case MbOp::Kind::Gadget: b.phase_gadget(w, op.angle_pi); break;
    }
  }
}

namespace {

struct OpList {
  std::vector<MbOp> ops;
  void rz(int w, double a) { ops.push_back({MbOp::Kind::Rz, {w}, a}); }
  void h(int w) { ops.push_back({MbOp::Kind::H, {w}, 0.0}); }
  void cz(int a, int b) { ops.push_back({MbOp::Kind::Cz, {a, b}, 0.0}); }
  void cnot(int c, int t) {
    h(t);
    cz(c, t);
    h(t);
  }
  void t(int w) { rz(w, 0.25); }
  void tdg(int w) { rz(w, -0.25); }
  void gadget(std::vector<int> w, double a) { ops.push_back({MbOp::Kind::Gadget, std::move(w), a}); }
};

}  // namespace

MbComputation mb_t_gate() { return {1, {{MbOp::Kind::Rz, {0}, 0.25}}}; }

MbComputation mb_cnot() {
  OpList o;
  o.cnot(0, 1);
  return {2, o.ops};
}

MbComputation mb_rotation_x(double mu) {
  OpList o;
  o.h(0);
  o.rz(0, mu / M_PI);
  o.h(0);
  return {1, o.ops};
}

MbComputation mb_layers(int n_layers) {
  if (n_layers < 1) throw ValidationError("need at least one layer");
  OpList o;
  for (int k = 0; k < n_layers; ++k) {
    o.cnot(0, 1);
    o.t(0);
    o.t(1);
  }
  return {2, o.ops};
}

MbComputation cswap_circuit(bool phase_gadgets) {
  const int c = 0, x = 1, y = 2;
  OpList o;
  o.cnot(y, x);
  if (phase_gadgets) {
    // CCZ as a phase polynomial over the seven nonempty parities.
    o.h(y);
    for (auto& [w, a] : std::vector<std::pair<std::vector<int>, double>>{{{c}, 0.25},
                                                                           {{x}, 0.25},
                                                                           {{y}, 0.25},
                                                                           {{c, x}, -0.25},
                                                                           {{c, y}, -0.25},
                                                                           {{x, y}, -0.25},
                                                                           {{c, x, y}, 0.25}})
      o.gadget(w, a);
    o.h(y);
  } else {
    const int a = c, b = x, t = y;
    o.h(t);
    o.cnot(b, t);
    o.tdg(t);
    o.cnot(a, t);
    o.t(t);
    o.cnot(b, t);
    o.tdg(t);
    o.cnot(a, t);
    o.t(b);
    o.t(t);
    o.h(t);
    o.cnot(a, b);
    o.t(a);
    o.tdg(b);
    o.cnot(a, b);
  }
  o.cnot(y, x);
  return {3, o.ops};
}

MeasurementPattern compile(const MbComputation& c, const std::string& name, VertexTag tag) {
  PatternBuilder b(c.m);
  b.set_tag(tag);
  std::vector<int> wires(c.m);
  std::iota(wires.begin(), wires.end(), 0);
  c.emit(b, wires);
  return b.finish(name);
}

MeasurementPattern mb_rotation_pattern(double mu) { return compile(mb_rotation_x(mu), "rotation_x"); }

MeasurementPattern generate_cswap_pattern(CswapVariant v) {
  bool a = v == CswapVariant::A;
  return compile(cswap_circuit(a), a ? "cswap_a" : "cswap_b", VertexTag::Cswap);
}

std::string cswap_pattern_path(CswapVariant v) {
  return std::string(SQEM_DATA_DIR) + (v == CswapVariant::A ? "/cswap_a.pattern" : "/cswap_b.pattern");
}

MeasurementPattern mb_cswap_pattern(CswapVariant v) {
  static const MeasurementPattern a = load_pattern(cswap_pattern_path(CswapVariant::A));
  static const MeasurementPattern b = load_pattern(cswap_pattern_path(CswapVariant::B));
  return v == CswapVariant::A ? a : b;
}

// ---------------------------------------------------------------------------------------------
// Simulator

const KrausChannel* VertexNoise::at(int v) const {
  if (v < 0 || v >= static_cast<int>(channel_of.size()) || channel_of[v] < 0) return nullptr;
  return &channels.at(channel_of[v]);
}

MbState::MbState(const GraphSpec& graph, const StateVector& initial, std::vector<int> labels, Repr repr,
                 VertexNoise noise, int cap)
    : graph_(&graph), repr_(repr), noise_(std::move(noise)), cap_(cap), labels_(std::move(labels)) {
  graph.validate();
  adj_ = graph.adjacency();
  if (static_cast<int>(noise_.channel_of.size()) != graph.n) throw ValidationError("one noise slot per vertex");
  for (const auto& ch : noise_.channels)
    if (ch.dim() != 2) throw ValidationError("vertex noise must act on one qubit");
  if (initial.size() != (1L << labels_.size())) throw ValidationError("initial state does not match its labels");
  if (active() > cap_) throw CapExceeded(fmt::format("{} active qubits exceed the cap of {}", active(), cap_));
  materialized_.assign(graph.n, 0);
  measured_.assign(graph.n, 0);
  noised_.assign(graph.n, 0);
  std::set<int> seen;
  for (int l : labels_) {
    if (!seen.insert(l).second) throw ValidationError("repeated label");
    if (l >= graph.n) throw ValidationError("label is not a vertex");
    if (l >= 0) materialized_[l] = 1;
  }
  if (repr_ == Repr::Density)
    rho_ = initial * initial.adjoint();
  else
    psi_ = initial;
}

double MbState::trace() const { return repr_ == Repr::Density ? rho_.trace().real() : psi_.squaredNorm(); }

ComplexMatrix MbState::density() const { return repr_ == Repr::Density ? rho_ : ComplexMatrix(psi_ * psi_.adjoint()); }

int MbState::position(int label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw ValidationError(fmt::format("qubit {} is not active", label));
  return static_cast<int>(it - labels_.begin());
}

void MbState::add_plus(int label) {
  if (active() + 1 > cap_) throw CapExceeded(fmt::format("active set would exceed the cap of {}", cap_));
  if (repr_ == Repr::Density) {
    long dim = rho_.rows();
    ComplexMatrix out(2 * dim, 2 * dim);
    for (long c = 0; c < 2 * dim; ++c)
      for (long r = 0; r < 2 * dim; ++r) out(r, c) = 0.5 * rho_(r >> 1, c >> 1);
    rho_ = std::move(out);
  } else {
    psi_ = kron(psi_, states::plus());
  }
  labels_.push_back(label);
}

void MbState::cz_positions(int i, int j) {
  int n = active();
  long dim = 1L << n;
  long mask = (1L << (n - 1 - i)) | (1L << (n - 1 - j));
  if (repr_ == Repr::Density) {
    for (long c = 0; c < dim; ++c) {
      bool sc = (c & mask) == mask;
      for (long r = 0; r < dim; ++r)
        if (sc != ((r & mask) == mask)) rho_(r, c) = -rho_(r, c);
    }
  } else {
    for (long x = 0; x < dim; ++x)
      if ((x & mask) == mask) psi_(x) = -psi_(x);
  }
}

void MbState::materialize(int v) {
  if (v < 0 || v >= graph_->n) throw ValidationError("vertex out of range");
  if (measured_[v]) throw ValidationError(fmt::format("vertex {} was already measured", v));
  if (materialized_[v]) return;
  for (int u : adj_[v])
    if (measured_[u]) throw ValidationError(fmt::format("neighbor {} of vertex {} was measured first", u, v));
  add_plus(v);
  materialized_[v] = 1;
  int pv = active() - 1;
  for (int u : adj_[v])
    if (materialized_[u]) cz_positions(position(u), pv);
}

void MbState::materialize_all() {
  for (int v = 0; v < graph_->n; ++v)
    if (!measured_[v]) materialize(v);
}

void MbState::settle(int v, std::mt19937_64* rng) {
  materialize(v);
  for (int u : adj_[v])
    if (!measured_[u]) materialize(u);
  if (noised_[v]) return;
  noised_[v] = 1;
  const KrausChannel* ch = noise_.at(v);
  if (!ch) return;
  auto shape = SubsystemShape::qubits(active());
  int pos = position(v);
  if (repr_ == Repr::Density) {
    // vec of each 2x2 block (index 2a + b) maps through sum_k K (x) conj(K).
    Eigen::Matrix4cd S = Eigen::Matrix4cd::Zero();
    for (const auto& k : ch->operators) S += kron(k, ComplexMatrix(k.conjugate()));
    long bit = 1L << (active() - 1 - pos);
    long dim = rho_.rows();
    Eigen::Vector4cd b;
    for (long c0 = 0; c0 < dim; ++c0) {
      if (c0 & bit) continue;
      long c1 = c0 | bit;
      for (long r0 = 0; r0 < dim; ++r0) {
        if (r0 & bit) continue;
        long r1 = r0 | bit;
        b << rho_(r0, c0), rho_(r0, c1), rho_(r1, c0), rho_(r1, c1);
        b = S * b;
        rho_(r0, c0) = b(0);
        rho_(r0, c1) = b(1);
        rho_(r1, c0) = b(2);
        rho_(r1, c1) = b(3);
      }
    }
    return;
  }
  if (!rng) throw ValidationError("trajectory noise needs a random generator");
  double norm = psi_.squaredNorm();
  std::vector<StateVector> branches;
  std::vector<double> weights;
  for (const auto& k : ch->operators) {
    branches.push_back(sqem::apply(psi_, shape, k, {pos}));
    weights.push_back(branches.back().squaredNorm());
  }
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  int k = pick(*rng);
  psi_ = branches[k] * std::sqrt(norm / weights[k]);
}

double MbState::project(int v, const StateVector& ket) {
  if (v < 0 || v >= graph_->n) throw ValidationError("only graph vertices can be measured");
  if (measured_[v]) throw ValidationError(fmt::format("vertex {} was already measured", v));
  materialize(v);
  int pos = position(v);
  auto shape = SubsystemShape::qubits(active());
  if (repr_ == Repr::Density)
    rho_ = sqem::project(DensityMatrix(rho_, shape, false), ket, {pos}).matrix;
  else
    psi_ = sqem::project(psi_, shape, ket, {pos});
  labels_.erase(labels_.begin() + pos);
  measured_[v] = 1;
  return trace();
}

double MbState::probability(int v, const StateVector& ket) const {
  if (v < 0 || v >= graph_->n || !materialized_[v] || measured_[v]) throw ValidationError("vertex is not active");
  int n = active();
  long bit = 1L << (n - 1 - position(v));
  long dim = 1L << n;
  if (repr_ == Repr::Pure) {
    double p = 0;
    for (long x = 0; x < dim; ++x)
      if (!(x & bit)) p += std::norm(std::conj(ket(0)) * psi_(x) + std::conj(ket(1)) * psi_(x | bit));
    return p;
  }
  cplx p = 0;
  for (long x = 0; x < dim; ++x) {
    if (x & bit) continue;
    long y = x | bit;
    p += std::norm(ket(0)) * rho_(x, x) + std::norm(ket(1)) * rho_(y, y) + std::conj(ket(0)) * ket(1) * rho_(x, y) +
         std::conj(ket(1)) * ket(0) * rho_(y, x);
  }
  return p.real();
}

void MbState::normalize() {
  double t = trace();
  if (!(t > 0)) throw std::runtime_error("cannot normalize a zero state");
  if (repr_ == Repr::Density)
    rho_ /= t;
  else
    psi_ /= std::sqrt(t);
}

void MbState::apply_pauli(int v, int x, int z) {
  if (!x && !z) return;
  ComplexMatrix op = gates::I2();
  if (z) op = gates::Z() * op;
  if (x) op = gates::X() * op;
  int pos = position(v);
  auto shape = SubsystemShape::qubits(active());
  if (repr_ == Repr::Density)
    conjugate_inplace(rho_, shape, op, {pos});
  else
    psi_ = sqem::apply(psi_, shape, op, {pos});
}

void MbState::reorder(const std::vector<int>& front) {
  std::vector<int> perm;
  for (int l : front) perm.push_back(position(l));
  for (int p = 0; p < active(); ++p)
    if (std::find(perm.begin(), perm.end(), p) == perm.end()) perm.push_back(p);
  if (static_cast<int>(perm.size()) != active()) throw ValidationError("reorder: repeated label");
  std::vector<int> labels;
  for (int p : perm) labels.push_back(labels_[p]);
  long dim = 1L << active();
  std::vector<long> src(dim);
  for (long x = 0; x < dim; ++x) src[x] = permute_index(x, perm);
  if (repr_ == Repr::Density) {
    ComplexMatrix out(dim, dim);
    for (long c = 0; c < dim; ++c)
      for (long r = 0; r < dim; ++r) out(r, c) = rho_(src[r], src[c]);
    rho_ = std::move(out);
  } else {
    StateVector out(dim);
    for (long x = 0; x < dim; ++x) out(x) = psi_(src[x]);
    psi_ = std::move(out);
  }
  labels_ = std::move(labels);
}

namespace {

void finalize(const MeasurementPattern& p, PatternRun& run, const RunOptions& opt) {
  for (int o : p.graph.outputs) run.state.settle(o, opt.rng);
  if (opt.fold_byproducts)
    for (size_t j = 0; j < p.graph.outputs.size(); ++j)
      run.state.apply_pauli(p.graph.outputs[j], p.byproducts[j].x.eval(run.outcomes),
                            p.byproducts[j].z.eval(run.outcomes));
  std::vector<int> front;
  for (int l : run.state.labels())
    if (l < 0) front.push_back(l);
  for (int o : p.graph.outputs) front.push_back(o);
  run.state.reorder(front);
}

constexpr size_t kMaxEnumerated = 20;

}  // namespace

std::vector<PatternRun> run_pattern(const MeasurementPattern& p, MbState state, const RunOptions& opt) {
  if (opt.mode == OutcomeMode::Enumerate && p.measurements.size() > kMaxEnumerated)
    throw CapExceeded(fmt::format("enumeration over {} outcomes is too large", p.measurements.size()));
  if (opt.mode == OutcomeMode::Sample && !opt.rng) throw ValidationError("sampling needs a random generator");
  if (opt.mode == OutcomeMode::Fix && static_cast<int>(opt.fixed.size()) != p.graph.n)
    throw ValidationError("fixed outcomes need one entry per vertex");
  if (opt.full_materialization) state.materialize_all();

  std::vector<PatternRun> out;
  std::function<void(size_t, PatternRun)> step = [&](size_t k, PatternRun run) {
    for (; k < p.measurements.size(); ++k) {
      const Measurement& m = p.measurements[k];
      run.state.settle(m.vertex, opt.rng);
      if (opt.mode == OutcomeMode::Enumerate) {
        for (int s = 0; s < 2; ++s) {
          PatternRun branch = run;
          branch.outcomes[m.vertex] = static_cast<int8_t>(s);
          branch.weight = branch.state.project(m.vertex, m.ket(run.outcomes, s));
          if (branch.weight > 1e-14) step(k + 1, std::move(branch));
        }
        return;
      }
      int s = 0;
      if (opt.mode == OutcomeMode::Fix) {
        s = opt.fixed[m.vertex];
        run.outcomes[m.vertex] = static_cast<int8_t>(s);
        run.weight = run.state.project(m.vertex, m.ket(run.outcomes, s));
        continue;
      }
      double before = run.state.trace();
      double p0 = std::clamp(run.state.probability(m.vertex, m.ket(run.outcomes, 0)) / before, 0.0, 1.0);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      s = u(*opt.rng) < p0 ? 0 : 1;
      run.outcomes[m.vertex] = static_cast<int8_t>(s);
      run.state.project(m.vertex, m.ket(run.outcomes, s));
      run.state.normalize();
      run.weight = 1.0;
    }
    finalize(p, run, opt);
    out.push_back(std::move(run));
  };
  PatternRun root{std::move(state), std::vector<int8_t>(p.graph.n, -1), 1.0};
  step(0, std::move(root));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Protocol

void MbConfig::validate() const {
  if (d != 2) throw ValidationError("the measurement-based protocol supports d = 2 only");
  if (m < 1) throw ValidationError("m must be positive");
  if (u.m != m) throw ValidationError("computation width does not match m");
  if (noise.dim() != 2) throw ValidationError("vertex noise must be a one-qubit channel");
  long dim = 1L << m;
  for (const StateVector* s : {&aux_state, &aux_meas_state})
    if (s->size() != 0 && (s->size() != dim || std::abs(s->norm() - 1) > kTol))
      throw ValidationError("auxiliary states must be normalized m-qubit states");
  if (mode == GbMode::QuasiDeterministic)
    throw ValidationError("the measurement-based protocol runs probabilistic or deterministic modes");
  if (samples < 1) throw ValidationError("samples must be positive");
  if (cap < 2) throw ValidationError("cap too small");
}

namespace {

constexpr size_t kEnumerateLimit = 12;

struct Build {
  MeasurementPattern pattern;
  std::vector<int> u_outputs;
};

Build build_protocol(const MbConfig& c) {
  int m = c.m;
  PatternBuilder b(1 + 2 * m);
  const MeasurementPattern cs = mb_cswap_pattern(c.variant);
  auto cswaps = [&] {
    for (int q = 0; q < m; ++q) b.append(cs, {0, 1 + q, 1 + m + q}, VertexTag::Cswap);
  };
  std::vector<int> a(m), bw(m);
  std::iota(a.begin(), a.end(), 1);
  std::iota(bw.begin(), bw.end(), 1 + m);
  cswaps();
  b.set_tag(VertexTag::Computation);
  c.u.emit(b, a);
  c.u.emit(b, bw);
  Build r;
  for (int w = 1; w <= 2 * m; ++w) {
    b.realize(w);
    r.u_outputs.push_back(b.current(w));
  }
  cswaps();
  r.pattern = b.finish(fmt::format("sqem_d2_m{}", m));
  return r;
}

VertexNoise scoped_noise(const MeasurementPattern& p, const std::vector<int>& u_outputs, const MbConfig& c) {
  VertexNoise vn = VertexNoise::none(p.graph.n);
  vn.channels = {c.noise};
  for (int v = 0; v < p.graph.n; ++v) {
    bool on = false;
    switch (c.scope) {
      case NoiseScope::AllQubits: on = true; break;
      case NoiseScope::ComputationOnly: on = p.tags[v] == VertexTag::Computation; break;
      case NoiseScope::ComputationOutputs:
        on = std::find(u_outputs.begin(), u_outputs.end(), v) != u_outputs.end();
        break;
    }
    if (on) vn.channel_of[v] = 0;
  }
  return vn;
}

// Runs the pattern exactly (enumeration) when small, otherwise by sampling. `consume` receives
// the sample index and the output density matrix weighted so that the average is a plain sum.
// Returns the number of samples (1 for exact runs).
int execute(const MeasurementPattern& p, const VertexNoise& noise, const StateVector& init,
            const std::vector<int>& labels, const MbConfig& c,
            const std::function<void(int, const ComplexMatrix&)>& consume) {
  bool exact = c.propagation == Propagation::Density && p.measurements.size() <= kEnumerateLimit;
  auto repr = c.propagation == Propagation::Density ? MbState::Repr::Density : MbState::Repr::Pure;
  if (exact) {
    MbState st(p.graph, init, labels, repr, noise, c.cap);
    for (const auto& run : run_pattern(p, std::move(st), {})) consume(0, run.state.density());
    return 1;
  }
  for (int i = 0; i < c.samples; ++i) {
    std::mt19937_64 rng(splitmix64(c.seed ^ splitmix64(static_cast<std::uint64_t>(i))));
    MbState st(p.graph, init, labels, repr, noise, c.cap);
    RunOptions opt;
    opt.mode = OutcomeMode::Sample;
    opt.rng = &rng;
    auto runs = run_pattern(p, std::move(st), opt);
    consume(i, runs.front().state.density() / static_cast<double>(c.samples));
  }
  return c.samples;
}

double expectation(const StateVector& t, const ComplexMatrix& rho) { return (t.adjoint() * rho * t)(0, 0).real(); }

double mean_error(const std::vector<double>& x) {
  size_t n = x.size();
  if (n < 2) return 0.0;
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1) / n);
}

}  // namespace

MeasurementPattern mb_protocol_pattern(const MbConfig& config) {
  config.validate();
  return build_protocol(config).pattern;
}

std::pair<double, double> mb_incoherent_fidelity(const MbConfig& config, const StateVector& input) {
  config.validate();
  int R = log2_exact(input.size()) - config.m;
  if (R < 0) throw ValidationError("input smaller than the register");
  MeasurementPattern p = compile(config.u, "computation");
  VertexNoise noise = scoped_noise(p, p.graph.outputs, config);
  std::vector<int> labels;
  for (int r = 0; r < R; ++r) labels.push_back(-1 - r);
  for (int v : p.graph.inputs) labels.push_back(v);
  StateVector t = kron(gates::identity(1L << R), config.u.unitary()) * input;
  std::vector<double> f(config.samples, 0.0);
  int n = execute(p, noise, input, labels, config,
                  [&](int i, const ComplexMatrix& rho) { f[i] += expectation(t, rho); });
  f.resize(n);
  double total = std::accumulate(f.begin(), f.end(), 0.0);
  for (double& v : f) v *= n;
  return {total, mean_error(f)};
}

MbResult run_mb_sqem(const MbConfig& config, const StateVector& input) {
  config.validate();
  const int m = config.m;
  int R = log2_exact(input.size()) - m;
  if (R < 0) throw ValidationError("input smaller than the register");
  if (1 + 2 * m + R > config.cap)
    throw CapExceeded(fmt::format("{} logical qubits exceed the cap of {}", 1 + 2 * m + R, config.cap));
  StateVector aux = config.aux_state.size() ? config.aux_state : states::tensor_power(states::plus(), m);
  StateVector aux_meas = config.aux_meas_state.size() ? config.aux_meas_state : states::tensor_power(states::plus(), m);

  Build build = build_protocol(config);
  const MeasurementPattern& p = build.pattern;
  VertexNoise noise = scoped_noise(p, build.u_outputs, config);
  std::vector<int> labels;
  for (int r = 0; r < R; ++r) labels.push_back(-1 - r);
  for (int q = 0; q < m; ++q) labels.push_back(p.graph.inputs[1 + q]);
  labels.push_back(p.graph.inputs[0]);
  for (int q = 0; q < m; ++q) labels.push_back(p.graph.inputs[1 + m + q]);
  StateVector init = kron(kron(input, states::plus()), aux);

  // Output order: [reference, control, a, b].
  std::vector<int> targets{R};
  for (int q = 0; q < m; ++q) targets.push_back(R + 1 + m + q);
  auto shape = SubsystemShape::qubits(R + 1 + 2 * m);
  std::vector<StateVector> ctrl{states::plus(), states::minus()};
  std::vector<StateVector> fb = complete_basis(aux_meas);
  int n_out = 2 * static_cast<int>(fb.size());
  std::vector<std::vector<ComplexMatrix>> per(config.samples);
  int n = execute(p, noise, init, labels, config, [&](int i, const ComplexMatrix& rho) {
    DensityMatrix dm(rho, shape, false);
    auto& slot = per[i];
    if (slot.empty()) slot.assign(n_out, ComplexMatrix::Zero(1L << (R + m), 1L << (R + m)));
    for (int l = 0; l < 2; ++l)
      for (size_t k = 0; k < fb.size(); ++k)
        slot[l * fb.size() + k] += sqem::project(dm, kron(ctrl[l], fb[k]), targets).matrix;
  });
  per.resize(n);

  StateVector t = kron(gates::identity(1L << R), config.u.unitary()) * input;
  auto sys_shape = SubsystemShape::qubits(R + m);
  MbResult res;
  for (int l = 0; l < 2; ++l)
    for (size_t k = 0; k < fb.size(); ++k) {
      int idx = l * static_cast<int>(fb.size()) + static_cast<int>(k);
      ComplexMatrix sum = ComplexMatrix::Zero(1L << (R + m), 1L << (R + m));
      for (const auto& s : per) sum += s[idx];
      ProtocolOutcome o;
      o.control_outcome = l;
      for (int q = m - 1, kk = static_cast<int>(k); q >= 0; --q, kk >>= 1) o.aux_outcomes.insert(o.aux_outcomes.begin(), kk & 1);
      o.rho = DensityMatrix(sum, sys_shape, false);
      o.probability = o.rho.trace();
      o.fidelity = o.probability > 0 ? expectation(t, sum) / o.probability : 1.0;
      res.outcomes.push_back(std::move(o));
    }

  auto [f0, f0_err] = mb_incoherent_fidelity(config, input);
  res.f0_error = f0_err;
  if (config.mode == GbMode::Probabilistic) {
    const auto& o = res.outcomes.front();
    res.report = make_report(f0, o.fidelity, o.probability);
    if (n > 1 && o.probability > 0) {
      // Ratio estimator over samples.
      std::vector<double> dev;
      for (const auto& s : per) dev.push_back(n * (expectation(t, s[0]) - o.fidelity * s[0].trace().real()));
      res.f_error = mean_error(dev) / o.probability;
    }
    return res;
  }
  choose_corrections(res.outcomes, t, clifford_corrections(m), R);
  std::vector<std::pair<double, double>> pf;
  for (const auto& o : res.outcomes) pf.push_back({o.probability, o.fidelity});
  auto [P, F] = weighted_cj(pf);
  res.report = make_report(f0, F, P);
  if (n > 1) {
    std::vector<double> fs;
    for (const auto& s : per) {
      double acc = 0;
      for (int idx = 0; idx < n_out; ++idx) {
        const auto& o = res.outcomes[idx];
        if (!o.correction) continue;
        StateVector v = kron(gates::identity(1L << R), o.correction->adjoint()) * t;
        acc += expectation(v, s[idx]);
      }
      fs.push_back(n * acc / P);
    }
    res.f_error = mean_error(fs);
  }
  return res;
}

// ---------------------------------------------------------------------------------------------
// Teleportation through superposed Bell pairs

namespace {

StateVector bell_state(int k) {
  StateVector phi = max_entangled(1);
  return kron(gates::I2(), gates::pauli_product(k, 1)) * phi;
}

void apply_pair_noise(DensityMatrix& rho, const KrausChannel& ch, int a, int b) {
  if (ch.dim() == 2)
    rho = apply(ch, rho, {b});
  else if (ch.dim() == 4)
    rho = apply(ch, rho, {a, b});
  else
    throw ValidationError("Bell-pair noise must act on one or two qubits");
}

}  // namespace

TeleportResult mb_teleport(const KrausChannel& bell_noise, TeleportReadout readout) {
  const StateVector phi = max_entangled(1);
  // Qubits: r, t, c, a1, b1, a2, b2.
  StateVector init = kron_all(std::vector<StateVector>{phi, states::plus(), phi, phi});
  DensityMatrix rho = DensityMatrix::pure(init, SubsystemShape::qubits(7));
  apply_pair_noise(rho, bell_noise, 3, 4);
  apply_pair_noise(rho, bell_noise, 5, 6);
  ComplexMatrix cs = cswap_unitary(2, 1);
  rho = conjugate(rho, cs, {2, 3, 5});

  // Bell measurement on (t, a1); the Pauli correction lands on b1 or b2 depending on the control.
  DensityMatrix after(ComplexMatrix::Zero(32, 32), SubsystemShape::qubits(5), false);
  ComplexMatrix p0 = states::zero() * states::zero().adjoint(), p1 = states::one() * states::one().adjoint();
  for (int k = 0; k < 4; ++k) {
    DensityMatrix r = project(rho, bell_state(k), {1, 3});  // [r, c, b1, a2, b2]
    ComplexMatrix s = gates::pauli_product(k, 1);
    ComplexMatrix corr = kron(p0, kron(s, gates::I2())) + kron(p1, kron(gates::I2(), s));
    after.matrix += conjugate(r, corr, {1, 2, 4}).matrix;
  }
  after = conjugate(after, cs, {1, 2, 4});

  DensityMatrix kept(ComplexMatrix::Zero(8, 8), SubsystemShape::qubits(3), false);  // [r, c, b1]
  if (readout == TeleportReadout::Bell) {
    kept = project(after, phi, {3, 4});
  } else {
    kept.matrix = project(after, kron(states::plus(), states::plus()), {3, 4}).matrix +
                  project(after, kron(states::minus(), states::minus()), {3, 4}).matrix;
  }
  DensityMatrix out = project(kept, states::plus(), {1});

  TeleportResult res;
  res.outcome.control_outcome = 0;
  res.outcome.rho = out;
  res.outcome.probability = out.trace();
  res.outcome.fidelity = expectation(phi, out.matrix) / res.outcome.probability;

  // Plain teleportation through one noisy pair: qubits r, t, a, b.
  DensityMatrix plain = DensityMatrix::pure(kron(phi, phi), SubsystemShape::qubits(4));
  apply_pair_noise(plain, bell_noise, 2, 3);
  ComplexMatrix single = ComplexMatrix::Zero(4, 4);
  for (int k = 0; k < 4; ++k)
    single += conjugate(project(plain, bell_state(k), {1, 2}), gates::pauli_product(k, 1), {1}).matrix;
  res.report = make_report(expectation(phi, single), res.outcome.fidelity, res.outcome.probability);
  return res;
}

}  // namespace sqem
