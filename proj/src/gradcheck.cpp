#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "divcot/loss.hpp"
#include "divcot/network.hpp"
#include "divcot/rng.hpp"

namespace divcot {

namespace {

long double total_loss(const Network& net, const Tensor& input, std::span<const LabelMap> labels) {
  long double loss = 0.0L;
  for (const Tensor& logits : net.forward(input)) loss += pixel_cross_entropy_value(logits, labels);
  return loss;
}

}  // namespace

double finite_diff_check(Network& net, const Tensor& input, std::span<const LabelMap> labels,
                         const GradCheckOptions& options) {
  if (options.eps < 1e-7 || options.eps > 1e-3) throw std::invalid_argument("finite_diff_check: eps must be in [1e-7, 1e-3]");

  ParamSet& params = net.params();
  params.zero_grad();
  Network::Tape tape;
  const auto logits = net.forward(input, tape);
  std::vector<Tensor> grads;
  for (const Tensor& l : logits) grads.push_back(pixel_cross_entropy(l, labels).grad);
  net.backward(tape, grads);

  const std::size_t total = params.scalar_count();
  std::vector<std::size_t> picks(total);
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  const std::size_t count = std::min(total, options.samples);
  Rng rng(options.seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(picks[i], picks[i + rng.uniform_index(total - i)]);
  picks.resize(count);
  std::sort(picks.begin(), picks.end());

  double worst = 0.0;
  for (std::size_t k : picks) {
    const double g_bp = params.flat_grad(k);
    double& theta = params.flat_value(k);
    const double saved = theta;
    theta = saved + options.eps;
    const long double up = total_loss(net, input, labels);
    theta = saved - options.eps;
    const long double down = total_loss(net, input, labels);
    theta = saved;
    const double g_fd = static_cast<double>((up - down) / (2.0L * options.eps));
    const double denom = std::max({std::abs(g_bp), std::abs(g_fd), 1e-8});
    worst = std::max(worst, std::abs(g_bp - g_fd) / denom);
  }
  params.zero_grad();
  return worst;
}

}  // namespace divcot
