#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apd/gradcheck.hpp"

namespace apd {

// One gradient-verification case: builds its inputs from `seed` and compares
// analytic gradients with central differences.
struct GradCase {
  std::string module;
  std::string name;
  double tol = 1e-4;
  std::function<GradCheckReport(std::uint64_t seed, double tol)> run;
};

std::vector<GradCase> gradient_cases();
std::vector<std::string> gradient_modules();

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Fast invariant suite behind `apd selftest`.
std::vector<CheckResult> run_selftest(int grad_seeds = 2);

}  // namespace apd
