// verify.hpp: self-contained invariant suites run by `qfc verify` and the
// acceptance binary. Each check reports a measured quantity next to its
// threshold so a failure says by how much.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace qfc {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

// Trajectory-averaged SME states against the Lindblad solution (TLS, eps 0.3,
// rho0 = |1><1|, 2000 trajectories, tolerance 0.02 per element).
CheckResult verify_sme_lindblad(const VerifyOptions& opts);
// <1|rho(1)|1> = exp(-1) within 1e-6 without control.
CheckResult verify_decay();
// Exact rotation vs a 1e-4 scan on 50 closed-loop trajectories.
CheckResult verify_paqs_optimality(const VerifyOptions& opts);
// PaQS with its record filter on 200 Haar-random starts.
CheckResult verify_paqs_stabilization(const VerifyOptions& opts);
// Central differences at h = 1e-5 for every tensor op, a transformer and a
// GRU cell; tolerance 1e-4 relative.
CheckResult verify_gradients(const VerifyOptions& opts);
// Perturbing decoder position k' leaves logits before k' bit-identical.
CheckResult verify_causality(const VerifyOptions& opts);
// Singleton key, identical keys and the 2x2 hand case.
CheckResult verify_attention();

// All of the above in order, logging one line per check.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts, std::ostream* log = nullptr);

std::string format_check(const CheckResult& r);

}  // namespace qfc
