#include "divcot/network.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "divcot/parallel.hpp"
#include "divcot/rng.hpp"

namespace divcot {

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::ConvSeg: return "conv-seg";
    case Arch::MixerSeg: return "mixer-seg";
    case Arch::Shared2Head: return "shared-2head";
  }
  return "?";
}

std::string to_string(Domain domain) {
  switch (domain) {
    case Domain::Rgb: return "rgb";
    case Domain::Dct: return "dct";
    case Domain::Hsv: return "hsv";
  }
  return "?";
}

Arch parse_arch(std::string_view tag) {
  if (tag == "conv-seg") return Arch::ConvSeg;
  if (tag == "mixer-seg") return Arch::MixerSeg;
  if (tag == "shared-2head") return Arch::Shared2Head;
  throw std::invalid_argument("unknown architecture tag: " + std::string(tag));
}

Domain parse_domain(std::string_view tag) {
  if (tag == "rgb") return Domain::Rgb;
  if (tag == "dct") return Domain::Dct;
  if (tag == "hsv") return Domain::Hsv;
  throw std::invalid_argument("unknown domain tag: " + std::string(tag));
}

std::size_t domain_channels(Domain domain) { return domain == Domain::Dct ? 64 : 3; }

std::string spec_to_json(const NetworkSpec& s) {
  nlohmann::json j = {{"arch", to_string(s.arch)},   {"domain", to_string(s.domain)}, {"classes", s.classes},
                      {"width", s.width},            {"image_size", s.image_size},    {"seed", s.seed},
                      {"mixer_blocks", s.mixer_blocks}};
  return j.dump();
}

NetworkSpec spec_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  NetworkSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.domain = parse_domain(j.at("domain").get<std::string>());
  s.classes = j.at("classes").get<int>();
  s.width = j.at("width").get<int>();
  s.image_size = j.at("image_size").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.mixer_blocks = j.value("mixer_blocks", 4);
  return s;
}

namespace {

class Builder {
 public:
  Builder(ParamSet& params, std::uint64_t seed, std::string prefix)
      : params_(params), rng_(seed), prefix_(std::move(prefix)) {}

  Conv3x3 conv(std::size_t in, std::size_t out, std::size_t stride) {
    const std::string base = next("conv");
    Conv3x3 l{in, out, stride, 0, 0};
    l.weight = params_.add(base + ".weight", kaiming({out, in * 9}, in * 9));
    l.bias = params_.add(base + ".bias", Tensor({out}, 0.0));
    return l;
  }

  Dense dense(std::size_t in, std::size_t out) {
    const std::string base = next("dense");
    Dense l{in, out, 0, 0};
    l.weight = params_.add(base + ".weight", kaiming({out, in}, in));
    l.bias = params_.add(base + ".bias", Tensor({out}, 0.0));
    return l;
  }

  TokenMix token_mix(std::size_t tokens) {
    const std::string base = next("tokenmix");
    TokenMix l{tokens, 0, 0};
    l.weight = params_.add(base + ".weight", kaiming({tokens, tokens}, tokens));
    l.bias = params_.add(base + ".bias", Tensor({tokens}, 0.0));
    return l;
  }

  GroupNorm group_norm(std::size_t channels) {
    const std::string base = next("groupnorm");
    GroupNorm l;
    l.channels = channels;
    l.groups = 4;
    l.gamma = params_.add(base + ".gamma", Tensor({channels}, 1.0));
    l.beta = params_.add(base + ".beta", Tensor({channels}, 0.0));
    return l;
  }

  /// Continues the same random stream under a new name prefix.
  void rename(std::string prefix) {
    prefix_ = std::move(prefix);
    counter_ = 0;
  }

 private:
  std::string next(const char* kind) { return prefix_ + "." + std::to_string(counter_++) + "." + kind; }

  Tensor kaiming(Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng_.uniform(-bound, bound);
    return t;
  }

  ParamSet& params_;
  Rng rng_;
  std::string prefix_;
  int counter_ = 0;
};

constexpr std::size_t kGridFactor = 8;

std::vector<Block> conv_trunk(Builder& b, Domain domain, std::size_t width) {
  std::vector<Block> blocks;
  auto conv_block = [&](std::size_t in, std::size_t stride) {
    blocks.push_back(Block{{b.conv(in, width, stride), Relu{}}, false});
  };
  if (domain == Domain::Dct) {
    // The DCT grid is already at 1/8 resolution, so there is no downsampling stem.
    conv_block(64, 1);
    for (int i = 0; i < 3; ++i) conv_block(width, 1);
  } else {
    conv_block(3, 2);
    conv_block(width, 2);
    conv_block(width, 2);
    conv_block(width, 1);
    conv_block(width, 1);
  }
  return blocks;
}

std::vector<Block> mixer_trunk(Builder& b, Domain domain, std::size_t width, std::size_t tokens, int depth) {
  std::vector<Block> blocks;
  if (domain == Domain::Dct)
    blocks.push_back(Block{{b.dense(64, width)}, false});
  else
    blocks.push_back(Block{{SpaceToDepth{kGridFactor}, b.dense(3 * kGridFactor * kGridFactor, width)}, false});
  for (int i = 0; i < depth; ++i) {
    blocks.push_back(Block{{b.group_norm(width), b.token_mix(tokens)}, true});
    blocks.push_back(Block{{b.group_norm(width), b.dense(width, 2 * width), Relu{}, b.dense(2 * width, width)}, true});
  }
  blocks.push_back(Block{{b.group_norm(width)}, false});
  return blocks;
}

std::vector<Block> classifier_head(Builder& b, std::size_t width, std::size_t classes) {
  return {Block{{b.dense(width, classes), Upsample{kGridFactor}}, false}};
}

Tensor run_blocks(const std::vector<Block>& blocks, Tensor x, const ParamSet& params,
                  std::vector<std::vector<LayerCache>>* caches) {
  if (caches) caches->resize(blocks.size());
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const Block& blk = blocks[bi];
    std::vector<LayerCache>* lc = nullptr;
    if (caches) {
      lc = &(*caches)[bi];
      lc->resize(blk.layers.size());
    }
    Tensor y = blk.residual ? x : Tensor();
    Tensor h = std::move(x);
    for (std::size_t li = 0; li < blk.layers.size(); ++li)
      h = lc ? layer_forward(blk.layers[li], h, params, (*lc)[li]) : layer_forward(blk.layers[li], h, params);
    if (blk.residual) h += y;
    x = std::move(h);
  }
  return x;
}

Tensor backprop_blocks(const std::vector<Block>& blocks, Tensor g, const ParamSet& params,
                       const std::vector<std::vector<LayerCache>>& caches, GradBuffer& grads) {
  for (std::size_t bi = blocks.size(); bi-- > 0;) {
    const Block& blk = blocks[bi];
    Tensor skip = blk.residual ? g : Tensor();
    for (std::size_t li = blk.layers.size(); li-- > 0;)
      g = layer_backward(blk.layers[li], g, caches[bi][li], params, grads);
    if (blk.residual) g += skip;
  }
  return g;
}

}  // namespace

Network::Network(NetworkSpec spec) : spec_(spec) { build(); }

void Network::build() {
  const auto& s = spec_;
  if (s.classes < 2) throw std::invalid_argument("network needs at least 2 classes");
  if (s.width < 8 || s.width > 128) throw std::invalid_argument("network width must be in [8, 128]");
  if (s.image_size <= 0 || s.image_size % static_cast<int>(kGridFactor) != 0)
    throw std::invalid_argument("image size must be a positive multiple of 8");
  if (s.arch == Arch::Shared2Head && s.domain == Domain::Dct)
    throw std::invalid_argument("unsupported (arch, domain) pair: shared-2head/dct");
  if (s.arch == Arch::MixerSeg && s.width % 4 != 0)
    throw std::invalid_argument("mixer-seg width must be divisible by 4 (group norm)");

  const auto width = static_cast<std::size_t>(s.width);
  const auto classes = static_cast<std::size_t>(s.classes);
  const std::size_t grid = static_cast<std::size_t>(s.image_size) / kGridFactor;

  Builder trunk(params_, s.seed, "trunk");
  switch (s.arch) {
    case Arch::ConvSeg:
    case Arch::Shared2Head:
      trunk_ = conv_trunk(trunk, s.domain, width);
      break;
    case Arch::MixerSeg:
      trunk_ = mixer_trunk(trunk, s.domain, width, grid * grid, s.mixer_blocks);
      break;
  }
  if (s.arch == Arch::Shared2Head) {
    for (std::uint64_t h = 0; h < 2; ++h) {
      Builder head(params_, derive_seed(s.seed, {h + 1}), "head" + std::to_string(h));
      heads_.push_back(classifier_head(head, width, classes));
    }
  } else {
    trunk.rename("head0");
    heads_.push_back(classifier_head(trunk, width, classes));
  }
}

Shape Network::input_shape(std::size_t n) const {
  const auto side = static_cast<std::size_t>(spec_.image_size);
  if (spec_.domain == Domain::Dct) return {n, 64, side / kGridFactor, side / kGridFactor};
  return {n, 3, side, side};
}

void Network::check_input(const Tensor& input) const {
  if (input.rank() != 4 || input.dim(1) != in_channels())
    throw ShapeError(to_string(spec_.arch) + "/" + to_string(spec_.domain) + ": expected input " +
                     shape_str(input_shape(input.rank() == 4 ? input.dim(0) : 1)) + ", got " +
                     shape_str(input.shape()));
  if (spec_.arch == Arch::MixerSeg && input.shape() != input_shape(input.dim(0)))
    throw ShapeError("mixer-seg: token count is fixed by image size; expected " + shape_str(input_shape(input.dim(0))) +
                     ", got " + shape_str(input.shape()));
  if (spec_.domain != Domain::Dct && (input.dim(2) % kGridFactor || input.dim(3) % kGridFactor))
    throw ShapeError("input side must be divisible by 8, got " + shape_str(input.shape()));
}

Tensor Network::run_sample(const Tensor& x, std::size_t head_count, SampleTape* tape,
                           std::vector<Tensor>& head_out) const {
  Tensor features = run_blocks(trunk_, x, params_, tape ? &tape->trunk : nullptr);
  if (tape) tape->heads.resize(head_count);
  head_out.resize(head_count);
  for (std::size_t h = 0; h < head_count; ++h)
    head_out[h] = run_blocks(heads_[h], features, params_, tape ? &tape->heads[h] : nullptr);
  return features;
}

std::vector<Tensor> Network::forward(const Tensor& input, int threads) const {
  check_input(input);
  const std::size_t n = input.dim(0);
  std::vector<std::vector<Tensor>> per(n);
  parallel_for(n, threads, [&](std::size_t s) { run_sample(input.sample(s), heads(), nullptr, per[s]); });
  std::vector<Tensor> out;
  for (std::size_t h = 0; h < heads(); ++h) {
    const Shape& one = per[0][h].shape();
    Tensor t({n, one[1], one[2], one[3]});
    for (std::size_t s = 0; s < n; ++s) t.set_sample(s, per[s][h]);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tensor> Network::forward(const Tensor& input, Tape& tape, int threads) const {
  check_input(input);
  const std::size_t n = input.dim(0);
  tape.samples.assign(n, SampleTape{});
  std::vector<std::vector<Tensor>> per(n);
  parallel_for(n, threads, [&](std::size_t s) { run_sample(input.sample(s), heads(), &tape.samples[s], per[s]); });
  std::vector<Tensor> out;
  for (std::size_t h = 0; h < heads(); ++h) {
    const Shape& one = per[0][h].shape();
    Tensor t({n, one[1], one[2], one[3]});
    for (std::size_t s = 0; s < n; ++s) t.set_sample(s, per[s][h]);
    out.push_back(std::move(t));
  }
  return out;
}

void Network::backward(const Tape& tape, std::span<const Tensor> grad_logits, int threads) {
  if (grad_logits.size() != heads()) throw ShapeError("backward: expected one gradient per head");
  const std::size_t n = tape.samples.size();
  std::vector<GradBuffer> buffers(n);
  parallel_for(n, threads, [&](std::size_t s) {
    GradBuffer buf = params_.make_grad_buffer();
    Tensor g_trunk;
    for (std::size_t h = 0; h < heads(); ++h) {
      if (grad_logits[h].empty()) continue;
      Tensor g = backprop_blocks(heads_[h], grad_logits[h].sample(s), params_, tape.samples[s].heads[h], buf);
      if (g_trunk.empty())
        g_trunk = std::move(g);
      else
        g_trunk += g;
    }
    if (!g_trunk.empty()) backprop_blocks(trunk_, std::move(g_trunk), params_, tape.samples[s].trunk, buf);
    buffers[s] = std::move(buf);
  });
  for (auto& buf : buffers) {
    if (grad_hook_)
      for (double& v : buf[grad_hook_->first].values()) v *= grad_hook_->second;
    params_.accumulate(buf);
  }
}

Network build_network(Arch arch, Domain domain, int classes, int width, std::uint64_t seed, int image_size) {
  NetworkSpec s;
  s.arch = arch;
  s.domain = domain;
  s.classes = classes;
  s.width = width;
  s.seed = seed;
  s.image_size = image_size;
  return Network(s);
}

std::size_t count_params(const Network& net) { return net.params().scalar_count(); }

void save_network(const std::string& path, const Network& net) {
  save_params(path, net.params(), spec_to_json(net.spec()));
}

Network load_network(const std::string& path) {
  auto loaded = load_params(path);
  Network net(spec_from_json(loaded.meta));
  if (loaded.params.names() != net.params().names())
    throw std::runtime_error(path + ": parameter table does not match the stored network descriptor");
  for (std::size_t i = 0; i < loaded.params.size(); ++i) {
    if (loaded.params.value(i).shape() != net.params().value(i).shape())
      throw std::runtime_error(path + ": shape mismatch for " + loaded.params.name(i));
    net.params().value(i) = loaded.params.value(i);
  }
  return net;
}

}  // namespace divcot
