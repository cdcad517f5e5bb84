#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace divcot {

struct BoundParams {
  long long l = 0;
  long long u = 0;
  double b1_0 = 0.1;
  double b2_0 = 0.1;
  double delta = 0.1;
  double hyp_class_size = 2.0;
};

/// max{(l*b_i0 + u*b_j0 - u*d) / l, 0}, clamped at 1.
double bound_step(long long l, long long u, double b_i0, double b_j0, double d_observed);

struct SampleCondition {
  bool holds = false;
  double threshold = 0.0;
  long long m = 0;  // ceil(u * b_j0)
};

/// l*b_i0 <= e * (M!)^(1/M) - M with M = ceil(u*b_j0), evaluated through lgamma.
SampleCondition sample_condition(long long l, double b_i0, long long u, double b_j0);

struct LabeledSize {
  long long l = 0;
  bool degenerate = false;  // delta >= |H|: the log term is not positive
};

/// ceil((1/b0) * ln(|H| / delta)).
LabeledSize min_labeled_size(double b0, double delta, double hyp_class_size);

struct SigmaDisagreements {
  double opt_vs_sigma = 0.0;    // d(f*, sigma)
  double model_vs_sigma = 0.0;  // d(f, sigma)
};

SigmaDisagreements sigma_disagreements(long long l, long long u, double d_prev_vs_opt, double d_cross,
                                       double d_vs_opt);

struct BoundRecord {
  int k = 0;
  double d = 0.0;      // observed disagreement fed to the step
  double b1 = 0.0;
  double b2 = 0.0;
  bool condition = false;
  double violations = 0.0;  // fraction of trials exceeding either bound (Monte-Carlo only)
};

/// Trace of the recursion for a sequence of observed disagreements (k = 1..).
std::vector<BoundRecord> bound_trace(const BoundParams& p, std::span<const double> d_observed);

/// True when both sample conditions hold and l meets both labeled-size requirements.
bool guarantee_preconditions(const BoundParams& p);

struct McRecord {
  int k = 0;
  double mean_d_cross = 0.0;
  double mean_b1 = 0.0, mean_b2 = 0.0;
  double mean_err1 = 0.0, mean_err2 = 0.0;
  double violation1 = 0.0, violation2 = 0.0;
  double violation_any = 0.0;
};

struct McResult {
  bool condition = false;  // guarantee_preconditions
  std::vector<McRecord> records;  // k = 0 (initial ERM vs b_i0) .. iterations
};

/// Monte-Carlo check over all binary labelings of a 2^domain_bits point domain.
/// |H| is taken from domain_bits; p.hyp_class_size is ignored.
McResult mc_verify(int domain_bits, const BoundParams& p, int iterations, int trials, std::uint64_t seed,
                   int threads = 1);

/// delta + 3 * sqrt(delta * (1 - delta) / trials).
inline double violation_band(double delta, int trials) {
  return delta + 3.0 * std::sqrt(delta * (1.0 - delta) / trials);
}

}  // namespace divcot
