#pragma once

#include "prefsamp/inference.hpp"
#include "prefsamp/io.hpp"
#include "prefsamp/simulate.hpp"

#include <optional>
#include <string>
#include <vector>

namespace prefsamp {

/// Population whose mean trajectory a fit reports: the monitoring network
/// (P1) or the whole domain (P2).
enum class PopulationMode { network, domain };

/// Run configuration, stored as INI text with sections.
struct RunConfig {
  // [data]
  std::string sites, observations;
  std::string domain;     ///< polygon file; empty: padded bounding box of the sites
  std::string exclusions; ///< polygons removed from the pseudo-site set
  double min_capture = 0.75;

  // [model]
  JointModelSpec spec;
  PopulationMode population = PopulationMode::network;
  /// Pseudo-site spacing in scaled units; 0 uses the mesh vertices.
  double pseudo_spacing = 0.0;

  // [constants], written after a fit
  std::optional<PreprocessConstants> constants;

  MeshOptions mesh{0.8, 1.6, 25};
  PriorSettings priors;
  OuterOptions outer;
  InnerOptions inner;

  // [posterior]
  int draws = 200;
  int threads = 1;

  // [run]
  std::uint64_t seed = 1;
  std::string output = "out";

  // [simulation] and [study]
  SimConfig sim;
  int replicates = 100;
  int study_implementation = 2;

  // [convergence]
  ConvergenceConfig convergence;
  std::vector<double> spacings{1.0, 0.5, 0.25};

  /// Directory relative paths are resolved against (not serialized).
  std::string base_dir;

  /// Path of a data entry resolved against base_dir.
  std::string resolve(const std::string &p) const;
  StudyOptions study_options() const;

  bool operator==(const RunConfig &o) const;
};

/// Throws ConfigError naming the line and key for syntax errors, unknown
/// keys, bad values and missing input files.
RunConfig parse_config(const std::string &text, const std::string &source = "config",
                       const std::string &base_dir = {});
RunConfig load_config(const std::string &path);
std::string config_text(const RunConfig &c);
void save_config(const RunConfig &c, const std::string &path);

} // namespace prefsamp
