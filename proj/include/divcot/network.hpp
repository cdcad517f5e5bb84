#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divcot/layers.hpp"
#include "divcot/params.hpp"

namespace divcot {

enum class Arch { ConvSeg, MixerSeg, Shared2Head };
enum class Domain { Rgb, Dct, Hsv };

std::string to_string(Arch arch);
std::string to_string(Domain domain);
/// Parses the config tags "conv-seg", "mixer-seg", "shared-2head".
Arch parse_arch(std::string_view tag);
/// Parses "rgb", "dct", "hsv".
Domain parse_domain(std::string_view tag);

/// Channels a network of this domain consumes (3 for rgb/hsv, 64 for dct).
std::size_t domain_channels(Domain domain);

struct NetworkSpec {
  Arch arch = Arch::ConvSeg;
  Domain domain = Domain::Rgb;
  int classes = 4;
  int width = 32;
  /// Side of the RGB image the network segments; the mixer's token count derives from it.
  int image_size = 64;
  std::uint64_t seed = 0;
  int mixer_blocks = 4;

  bool operator==(const NetworkSpec&) const = default;
};

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& json);

/// A run of layers, optionally wrapped in an identity skip connection.
struct Block {
  std::vector<Layer> layers;
  bool residual = false;
};

/// Segmentation network: a trunk followed by one or two classifier heads, all
/// producing logits at full input resolution (8x the prediction grid).
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t heads() const { return heads_.size(); }
  std::size_t in_channels() const { return domain_channels(spec_.domain); }
  /// Expected input extents for a batch of `n` samples.
  Shape input_shape(std::size_t n) const;

  struct SampleTape {
    std::vector<std::vector<LayerCache>> trunk;
    std::vector<std::vector<std::vector<LayerCache>>> heads;
  };
  struct Tape {
    std::vector<SampleTape> samples;
  };

  /// Logits per head, each N x classes x H x W.
  std::vector<Tensor> forward(const Tensor& input, int threads = 1) const;
  std::vector<Tensor> forward(const Tensor& input, Tape& tape, int threads = 1) const;

  /// Accumulates parameter gradients for dL/dlogits (one tensor per head; an
  /// empty tensor means that head receives no gradient). Per-sample buffers
  /// are reduced in sample order, so results are independent of `threads`.
  void backward(const Tape& tape, std::span<const Tensor> grad_logits, int threads = 1);

  /// Test hook: scales the backpropagated gradient of one parameter tensor.
  void set_grad_hook(std::size_t param_index, double factor) { grad_hook_ = {param_index, factor}; }
  void clear_grad_hook() { grad_hook_.reset(); }

  const std::vector<Block>& trunk() const { return trunk_; }

 private:
  void build();
  void check_input(const Tensor& input) const;
  Tensor run_sample(const Tensor& x, std::size_t head_count, SampleTape* tape, std::vector<Tensor>& head_out) const;

  NetworkSpec spec_;
  ParamSet params_;
  std::vector<Block> trunk_;
  std::vector<std::vector<Block>> heads_;
  std::optional<std::pair<std::size_t, double>> grad_hook_;
};

Network build_network(Arch arch, Domain domain, int classes, int width, std::uint64_t seed, int image_size = 64);

/// Exact number of scalar parameters.
std::size_t count_params(const Network& net);

void save_network(const std::string& path, const Network& net);
Network load_network(const std::string& path);

/// Gradient check over a random subsample of parameters (all of them when
/// fewer than `samples`): max |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-8) with
/// central differences of the mean pixel cross entropy summed over heads.
struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
};
double finite_diff_check(Network& net, const Tensor& input, std::span<const LabelMap> labels,
                         const GradCheckOptions& options = {});

}  // namespace divcot
