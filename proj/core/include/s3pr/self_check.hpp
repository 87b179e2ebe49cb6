#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s3pr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast property checks on small random instances: operator adjoints and
/// CDP/Fourier algebra, generator and loss gradients against central
/// differences, autocorrelation/direct loss ratio, metric invariances.
std::vector<CheckResult> run_self_checks(std::uint64_t seed = 1);

}  // namespace s3pr
