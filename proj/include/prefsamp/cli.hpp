#pragma once

#include "prefsamp/config.hpp"
#include "prefsamp/exposure.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace prefsamp {

/// Exit statuses of the command line tool.
enum ExitCode : int {
  exit_ok = 0,
  exit_error = 1,
  exit_not_converged = 2,
  exit_usage = 64,
  exit_config = 65,
};

/// Everything `fit` writes, enough to rebuild the model without the inputs.
struct FitBundle {
  RunConfig config;
  DomainPolygon domain;
  SiteTable sites;
  std::vector<int> years;
  FitResult fit;
  PosteriorEnsemble ensemble;
};

void write_fit_dir(const std::string &dir, const FitBundle &b);
FitBundle read_fit_dir(const std::string &dir);
/// Rebuilds the mesh and assembled model recorded in a bundle.
AssembledModel rebuild_model(const FitBundle &b);

std::string study_csv(const StudyReport &r);
std::string study_summary_csv(const StudyReport &r);
std::string convergence_csv(const ConvergenceTable &t);

/// Runs a subcommand; argv[0] is the program name.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace prefsamp
