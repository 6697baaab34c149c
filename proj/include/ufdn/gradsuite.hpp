#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ufdn {

inline constexpr double kGradSuiteTolerance = 1e-4;

/// One finite-difference check. `name` is "<op>" or "<op>[<input>]"; `run`
/// returns the largest relative error of the analytic gradient.
struct GradCheckCase {
  std::string name;
  std::string kind;  // "op", "loss" or "composite"
  std::function<double()> run;
};

/// Every differentiable op, every loss term and every composite objective at
/// small random shapes drawn from `seed`.
std::vector<GradCheckCase> default_gradcheck_cases(std::uint64_t seed = 0);

/// Op part of a case name: "conv2d[w]" -> "conv2d".
std::string_view case_op(std::string_view name);

struct GradCheckOutcome {
  std::string name;
  double max_rel_error = 0;
  bool passed = false;
};

/// Runs the cases whose op name equals `scope` ("all" runs every case).
/// Throws ConfigError if `scope` selects nothing.
std::vector<GradCheckOutcome> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                            std::string_view scope,
                                            double tolerance = kGradSuiteTolerance);

}  // namespace ufdn
