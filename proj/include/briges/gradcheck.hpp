#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace briges {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t instances = 20;
  double step = 1e-3;  // central difference half-width
  // Test fixture: multiply the analytic gradient of this parameter by 2.
  std::optional<std::string> fault;
};

struct GradcheckResult {
  double worst_error = 0.0;
  std::string worst_param;
  std::size_t worst_instance = 0;
  std::map<std::string, double> per_param;  // worst error per gate parameter name
  std::size_t instances = 0;
};

/// Compares backward() against central differences for every gate
/// parameter on random small gates. Error per tensor is
/// |a - n|_2 / max(|a|_2, |n|_2, 1e-8).
GradcheckResult run_gradcheck(const GradcheckOptions& opts);

}  // namespace briges
