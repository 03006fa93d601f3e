#pragma once

#include "sqem/qmath.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sqem {

enum class Protocol { Gb, Nested, Mb, Ib };
enum class OutputFormat { Csv, Json };

struct GateSpec {
  enum class Kind { Named, Layered, Matrix };
  Kind kind = Kind::Named;
  std::string name;     // T, cNOT, CZ, H, I for Named; label for Matrix
  ComplexMatrix matrix; // Matrix only
};

// Auxiliary state and the post-selection basis element.
struct AuxSpec {
  enum class State { Auto, Named, Bloch, Bell, Alternating };
  enum class Measure { Default, Ideal, Same, XBasis, Phase };
  State state = State::Auto;
  std::string name;          // Named: plus, minus, zero, one, right, left
  double theta = 0, phi = 0; // Bloch angles (radians)
  Measure measure = Measure::Default;
  double measure_phase = 0;  // Phase: (|0> + e^{i phase}|1>)/sqrt2 and its complement

  std::string label() const;  // empty for the default choice
};

struct SweepSpec {
  Protocol protocol = Protocol::Gb;
  GateSpec gate;
  std::string noise = "depolarizing";  // depolarizing | dephasing
  std::vector<double> p0;
  std::vector<int> d{2};
  std::vector<int> n;       // nested iterations
  std::vector<int> layers;  // layered gate depths
  std::vector<std::string> modes{"probabilistic"};
  std::vector<AuxSpec> aux{AuxSpec{}};
  std::optional<std::vector<double>> p_relative;  // gb noisy cSWAP, d = 2
  std::string keep = "drop-worst";  // drop-worst | threshold | all
  double keep_value = 1;
  // mb
  std::string scope = "computation";  // computation | all-qubits
  std::string variant = "b";
  std::string propagation = "density";
  int samples = 8;
  int cap = 12;

  int qubits() const;
  long points() const;
};

struct ExperimentConfig {
  std::string name;
  std::vector<SweepSpec> sweeps;
  std::uint64_t seed = 1;
  int jobs = 1;
  OutputFormat format = OutputFormat::Csv;
  std::string out;  // empty: standard output
  bool timing = false;
  bool monte_carlo = false;

  void validate() const;
};

struct ResultRow {
  std::string protocol, gate, noise_kind;
  double p0 = 0;
  long d = 0;
  std::string mode;
  double f_incoherent = 0, f_coherent = 0, ratio = 0;
  bool ratio_infinite = false;
  double success_probability = 0;
  std::uint64_t seed = 0;
  double wall_time_ms = 0;
  std::optional<double> statistical_error;
};

inline constexpr int kSchemaVersion = 1;

// Parses a JSON config: either one sweep at top level or an "experiments" array of sweeps.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct PresetInfo {
  std::string name;
  std::string description;
  bool monte_carlo;
};
std::vector<PresetInfo> list_presets();
ExperimentConfig preset_config(const std::string& name);
// JSON text of a preset, accepted by parse_config.
std::string preset_json(const std::string& name);

// Evaluates every sweep point on a pool of config.jobs workers; rows come back canonically sorted.
std::vector<ResultRow> run_sweeps(const ExperimentConfig& config);
// run_sweeps, then writes the table to config.out (or `fallback` when out is empty).
std::vector<ResultRow> run_experiment(const ExperimentConfig& config, std::ostream& fallback);

void sort_rows(std::vector<ResultRow>& rows);
void write_csv(const std::vector<ResultRow>& rows, std::ostream& out);
void write_json(const std::vector<ResultRow>& rows, std::ostream& out);
std::string format_rows(const std::vector<ResultRow>& rows, OutputFormat format);

}  // namespace sqem
