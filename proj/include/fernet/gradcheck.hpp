#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fernet {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;       // central-difference step
  double tolerance = 1e-4;  // on the relative error below
  /// |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Name of a check whose analytic gradient is deliberately corrupted
  /// (exercises the failure path); empty for none.
  std::string sabotage;
};

struct GradCheckEntry {
  std::string check;      // e.g. "conv", "inception", "tiny_network"
  std::string parameter;  // "input", "weights", "bias", or a network parameter name
  std::size_t entries = 0;
  double max_rel_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0;
  bool passed() const;
  double max_rel_error() const;
};

/// Names of the checks in run order.
std::vector<std::string> gradcheck_names();

/// fp64 finite-difference suite: conv, max-pool, average pool, ReLU, fully
/// connected, concat, softmax cross-entropy, an inception block and the tiny
/// network. Layer checks use the scalar loss <f(x), R> with random R.
GradCheckReport run_gradcheck(const GradCheckOptions& options = {});

void write_gradcheck_report(std::ostream& out, const GradCheckReport& report);

}  // namespace fernet
