#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/diagnostics.hpp"
#include "numclip/gradcheck.hpp"

namespace numclip::app {

/// Exit statuses shared by every subcommand.
enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,  // a verification command found a violation
  kUsage = 2,        // bad flag or config file
  kRuntime = 3,      // I/O or numerical failure
};

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Result of checking one operation over many random instances.
struct OpCheck {
  std::string name;
  std::size_t instances = 0;
  GradCheckReport worst;  // report of the worst instance
  std::size_t worst_instance = 0;
  bool passed = false;
};

/// Finite-difference checks of every loss and head operation.
std::vector<OpCheck> gradient_suite(double tolerance, std::size_t instances, std::uint64_t seed);

struct BoundCheck {
  std::string preset;
  std::size_t batch = 0;
  MIEstimate exhaustive;   // preset negatives, exact expectation
  MIEstimate monte_carlo;  // independent negatives, sampled
  bool eq2 = false;        // MC bound within 3 standard errors of the MI
  bool eq3 = false;        // general bound holds exactly
};

struct PresetConditions {
  std::string preset;
  LambdaConditions conditions;
};

struct MISuite {
  std::vector<BoundCheck> bounds;
  std::vector<PresetConditions> conditions;
  bool passed = false;
};

/// Bound and λ-condition checks on the preset joints at M in {2, 4, 8}.
MISuite mi_suite(std::size_t trials, std::uint64_t seed);

}  // namespace numclip::app
