#include "divcot/pac_bound.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "divcot/parallel.hpp"
#include "divcot/rng.hpp"

namespace divcot {

namespace {

// Guards ceil() against values like 20.000000000000004 that are integers up to rounding.
long long ceil_tol(double x) { return static_cast<long long>(std::ceil(x - 1e-9 * std::max(1.0, std::abs(x)))); }

void check_rate(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0, 1]");
}

}  // namespace

double bound_step(long long l, long long u, double b_i0, double b_j0, double d_observed) {
  if (l <= 0) throw std::invalid_argument("bound_step: l must be positive");
  if (u < 0) throw std::invalid_argument("bound_step: u must be non-negative");
  check_rate(b_i0, "bound_step: b_i0");
  check_rate(b_j0, "bound_step: b_j0");
  check_rate(d_observed, "bound_step: d");
  const double ld = static_cast<double>(l), ud = static_cast<double>(u);
  const double b = (ld * b_i0 + ud * b_j0 - ud * d_observed) / ld;
  return std::clamp(b, 0.0, 1.0);
}

SampleCondition sample_condition(long long l, double b_i0, long long u, double b_j0) {
  const double m_real = static_cast<double>(u) * b_j0;
  if (!(m_real > 0.0)) throw std::invalid_argument("sample_condition: M = u*b_j0 must be positive");
  SampleCondition c;
  c.m = ceil_tol(m_real);
  const double m = static_cast<double>(c.m);
  c.threshold = std::numbers::e * std::exp(std::lgamma(m + 1.0) / m) - m;
  c.holds = static_cast<double>(l) * b_i0 <= c.threshold;
  return c;
}

LabeledSize min_labeled_size(double b0, double delta, double hyp_class_size) {
  if (!(b0 > 0.0 && b0 <= 1.0)) throw std::invalid_argument("min_labeled_size: b0 must be in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("min_labeled_size: delta must be in (0, 1)");
  if (!(hyp_class_size > 0.0)) throw std::invalid_argument("min_labeled_size: |H| must be positive");
  LabeledSize r;
  if (delta >= hyp_class_size) {
    r.degenerate = true;
    return r;
  }
  r.l = ceil_tol(std::log(hyp_class_size / delta) / b0);
  return r;
}

SigmaDisagreements sigma_disagreements(long long l, long long u, double d_prev_vs_opt, double d_cross,
                                       double d_vs_opt) {
  if (l < 0 || u < 0 || l + u == 0) throw std::invalid_argument("sigma_disagreements: l + u must be positive");
  check_rate(d_prev_vs_opt, "sigma_disagreements: d(f_prev, f*)");
  check_rate(d_cross, "sigma_disagreements: d(f, f_prev)");
  check_rate(d_vs_opt, "sigma_disagreements: d(f, f*)");
  const double ld = static_cast<double>(l), ud = static_cast<double>(u), n = ld + ud;
  return {ud * d_prev_vs_opt / n, (ld * d_vs_opt + ud * d_cross) / n};
}

bool guarantee_preconditions(const BoundParams& p) {
  const auto l1 = min_labeled_size(p.b1_0, p.delta, p.hyp_class_size);
  const auto l2 = min_labeled_size(p.b2_0, p.delta, p.hyp_class_size);
  return !l1.degenerate && !l2.degenerate && p.l >= l1.l && p.l >= l2.l &&
         sample_condition(p.l, p.b1_0, p.u, p.b2_0).holds && sample_condition(p.l, p.b2_0, p.u, p.b1_0).holds;
}

std::vector<BoundRecord> bound_trace(const BoundParams& p, std::span<const double> d_observed) {
  const bool cond = guarantee_preconditions(p);
  std::vector<BoundRecord> out;
  for (std::size_t k = 0; k < d_observed.size(); ++k) {
    BoundRecord r;
    r.k = static_cast<int>(k + 1);
    r.d = d_observed[k];
    r.b1 = bound_step(p.l, p.u, p.b1_0, p.b2_0, r.d);
    r.b2 = bound_step(p.l, p.u, p.b2_0, p.b1_0, r.d);
    r.condition = cond;
    out.push_back(r);
  }
  return out;
}

namespace {

using Counts = std::vector<long long>;

// Multinomial counts of n uniform draws over `points` cells, by sequential binomials.
Counts draw_counts(long long n, std::size_t points, std::mt19937_64& eng) {
  Counts c(points, 0);
  long long left = n;
  for (std::size_t i = 0; i + 1 < points && left > 0; ++i) {
    std::binomial_distribution<long long> bin(left, 1.0 / static_cast<double>(points - i));
    c[i] = bin(eng);
    left -= c[i];
  }
  c[points - 1] += left;
  return c;
}

// ERM over all labelings decomposes per point: majority vote, ties to label 0
// (the lexicographically smallest truth table among minimizers).
std::uint32_t erm(const Counts& ones, const Counts& zeros) {
  std::uint32_t h = 0;
  for (std::size_t x = 0; x < ones.size(); ++x)
    if (ones[x] > zeros[x]) h |= 1u << x;
  return h;
}

double disagreement(std::uint32_t a, std::uint32_t b, std::size_t points) {
  return static_cast<double>(std::popcount((a ^ b) & ((points >= 32 ? 0u : (1u << points)) - 1u))) /
         static_cast<double>(points);
}

struct Trial {
  std::vector<double> d_cross, b1, b2, err1, err2;
  std::vector<char> v1, v2;
};

Trial run_trial(std::size_t points, const BoundParams& p, int iterations, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  const std::uint32_t full = points >= 32 ? ~0u : (1u << points) - 1u;
  const std::uint32_t fstar = static_cast<std::uint32_t>(eng()) & full;
  const Counts lab = draw_counts(p.l, points, eng), unl = draw_counts(p.u, points, eng);

  Counts ones(points), zeros(points);
  for (std::size_t x = 0; x < points; ++x) ((fstar >> x) & 1u ? ones : zeros)[x] = lab[x];
  std::uint32_t f1 = erm(ones, zeros), f2 = f1;

  Trial t;
  auto record = [&](double d, double b1, double b2) {
    const double e1 = disagreement(f1, fstar, points), e2 = disagreement(f2, fstar, points);
    t.d_cross.push_back(d);
    t.b1.push_back(b1);
    t.b2.push_back(b2);
    t.err1.push_back(e1);
    t.err2.push_back(e2);
    t.v1.push_back(e1 > b1);
    t.v2.push_back(e2 > b2);
  };
  record(disagreement(f1, f2, points), p.b1_0, p.b2_0);

  for (int k = 1; k <= iterations; ++k) {
    // Each model relabels every unlabeled point with the counterpart's previous hypothesis.
    auto retrain = [&](std::uint32_t teacher) {
      Counts o = ones, z = zeros;
      for (std::size_t x = 0; x < points; ++x) ((teacher >> x) & 1u ? o : z)[x] += unl[x];
      return erm(o, z);
    };
    const std::uint32_t prev1 = f1, prev2 = f2;
    f1 = retrain(prev2);
    f2 = retrain(prev1);
    const double d1 = disagreement(prev2, f1, points), d2 = disagreement(prev1, f2, points);
    const double b1 = bound_step(p.l, p.u, p.b1_0, p.b2_0, d1);
    const double b2 = bound_step(p.l, p.u, p.b2_0, p.b1_0, d2);
    record(0.5 * (d1 + d2), b1, b2);
  }
  return t;
}

}  // namespace

McResult mc_verify(int domain_bits, const BoundParams& params, int iterations, int trials, std::uint64_t seed,
                   int threads) {
  if (domain_bits < 1 || domain_bits > 4)
    throw std::invalid_argument("mc_verify: domain_bits must be in [1, 4] for an enumerable hypothesis class");
  if (iterations < 0 || trials <= 0) throw std::invalid_argument("mc_verify: need iterations >= 0 and trials > 0");
  if (params.l <= 0 || params.u < 0) throw std::invalid_argument("mc_verify: need l > 0 and u >= 0");
  const std::size_t points = std::size_t{1} << domain_bits;
  BoundParams p = params;
  p.hyp_class_size = std::ldexp(1.0, static_cast<int>(points));

  std::vector<Trial> results(static_cast<std::size_t>(trials));
  parallel_for(results.size(), threads, [&](std::size_t i) {
    results[i] = run_trial(points, p, iterations, derive_seed(seed, {i}));
  });

  McResult out;
  out.condition = guarantee_preconditions(p);
  for (int k = 0; k <= iterations; ++k) {
    McRecord r;
    r.k = k;
    double any = 0.0;
    for (const Trial& t : results) {
      const auto kk = static_cast<std::size_t>(k);
      r.mean_d_cross += t.d_cross[kk];
      r.mean_b1 += t.b1[kk];
      r.mean_b2 += t.b2[kk];
      r.mean_err1 += t.err1[kk];
      r.mean_err2 += t.err2[kk];
      r.violation1 += t.v1[kk];
      r.violation2 += t.v2[kk];
      any += t.v1[kk] || t.v2[kk];
    }
    const double n = static_cast<double>(trials);
    r.mean_d_cross /= n;
    r.mean_b1 /= n;
    r.mean_b2 /= n;
    r.mean_err1 /= n;
    r.mean_err2 /= n;
    r.violation1 /= n;
    r.violation2 /= n;
    r.violation_any = any / n;
    out.records.push_back(r);
  }
  return out;
}

}  // namespace divcot
