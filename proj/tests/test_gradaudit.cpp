#include <doctest.h>

#include "amil/errors.hpp"
#include "amil/gradaudit.hpp"

using namespace amil;

TEST_CASE("every component passes a short audit") {
  AuditOptions opt;
  opt.seeds = 5;
  const auto results = run_gradient_audit(opt);
  REQUIRE(results.size() == audit_components().size());
  for (const AuditResult& r : results) {
    CAPTURE(r.component);
    CHECK(r.passed);
    CHECK(r.problems == 5);
    CHECK(r.params_checked > 0);
    CHECK(r.max_relative_error < 1e-4);
  }
  const std::string table = audit_table(results);
  for (const auto& c : audit_components()) CHECK(table.find(c) != std::string::npos);
}

TEST_CASE("component filter") {
  AuditOptions opt;
  opt.seeds = 2;
  opt.components = {"pooling"};
  const auto results = run_gradient_audit(opt);
  REQUIRE(results.size() == 1);
  CHECK(results[0].component == "pooling");
  opt.components = {"elbow"};
  CHECK_THROWS_AS(run_gradient_audit(opt), ConfigError);
}

TEST_CASE("a corrupted analytic gradient is caught") {
  for (const auto& c : audit_components()) {
    CAPTURE(c);
    CHECK(audit_once(c, 3, true).max_relative_error > 1e-4);
  }
  AuditOptions opt;
  opt.seeds = 2;
  opt.corrupt_analytic = true;
  for (const AuditResult& r : run_gradient_audit(opt)) CHECK_FALSE(r.passed);
}

TEST_CASE("audits are reproducible") {
  CHECK(audit_once("milnet", 9).max_relative_error == audit_once("milnet", 9).max_relative_error);
  CHECK(default_audit_step("generator") == 1e-4);
  CHECK(default_audit_step("pooling") == kGradCheckStep);
}
