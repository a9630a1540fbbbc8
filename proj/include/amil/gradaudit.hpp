#ifndef AMIL_GRADAUDIT_HPP_
#define AMIL_GRADAUDIT_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "amil/numkernel.hpp"

namespace amil {

// Finite-difference audits of every hand-derived gradient in the library.

struct AuditOptions {
  std::uint64_t seed = 1;
  std::size_t seeds = 20;          // independent random problems per component
  double tolerance = 1e-4;
  double step = 0.0;                // <= 0: per-component default
  std::vector<std::string> components;  // empty: all
  bool corrupt_analytic = false;   // negative control: perturbs one analytic entry
};

struct AuditResult {
  std::string component;
  std::size_t problems = 0;
  std::size_t params_checked = 0;
  double max_relative_error = 0.0;
  std::uint64_t worst_seed = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

/// pooling, milnet, margin, coupled, discriminator, generator
const std::vector<std::string>& audit_components();

/// One finite-difference check for `component` on the problem derived from `seed`.
GradCheckReport audit_once(const std::string& component, std::uint64_t seed,
                           bool corrupt_analytic = false, double step = 0.0);

/// Central-difference step used when none is given.
double default_audit_step(const std::string& component);

/// Throws ConfigError for an unknown component name.
std::vector<AuditResult> run_gradient_audit(const AuditOptions& options);

std::string audit_table(const std::vector<AuditResult>& results);

}  // namespace amil

#endif  // AMIL_GRADAUDIT_HPP_
