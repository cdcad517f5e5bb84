#include "divcot/cotrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "divcot/diagnostics.hpp"
#include "divcot/loss.hpp"
#include "divcot/optim.hpp"
#include "divcot/parallel.hpp"

namespace divcot {

namespace {

using nlohmann::json;

// Stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kLabeledOrder = 2;
constexpr std::uint64_t kUnlabeledOrder = 3;
constexpr std::uint64_t kLabeledView = 4;
constexpr std::uint64_t kWeakView = 5;
constexpr std::uint64_t kStrongView = 6;
constexpr std::uint64_t kCutMix = 7;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TopologyInfo {
  Topology topology;
  const char* tag;
  std::size_t members;
};

constexpr TopologyInfo kTopologies[] = {
    {Topology::Supervised, "supervised", 1}, {Topology::FixMatch, "fixmatch", 1},
    {Topology::Cps2, "cps2", 2},             {Topology::Cps3, "cps3", 3},
    {Topology::Shared2Head, "shared2head", 2}, {Topology::Diverse2, "diverse2", 2},
    {Topology::Diverse3, "diverse3", 3},     {Topology::Distill, "distill", 2},
};

void default_members(Topology t, std::vector<Arch>& archs, std::vector<Domain>& domains) {
  switch (t) {
    case Topology::Supervised:
    case Topology::FixMatch:
      archs = {Arch::ConvSeg};
      domains = {Domain::Rgb};
      break;
    case Topology::Cps2:
    case Topology::Distill:
      archs = {Arch::ConvSeg, Arch::ConvSeg};
      domains = {Domain::Rgb, Domain::Rgb};
      break;
    case Topology::Cps3:
      archs = {Arch::ConvSeg, Arch::ConvSeg, Arch::ConvSeg};
      domains = {Domain::Rgb, Domain::Rgb, Domain::Rgb};
      break;
    case Topology::Shared2Head:
      archs = {Arch::Shared2Head, Arch::Shared2Head};
      domains = {Domain::Rgb, Domain::Rgb};
      break;
    case Topology::Diverse2:
      archs = {Arch::ConvSeg, Arch::MixerSeg};
      domains = {Domain::Rgb, Domain::Dct};
      break;
    case Topology::Diverse3:
      archs = {Arch::ConvSeg, Arch::MixerSeg, Arch::ConvSeg};
      domains = {Domain::Rgb, Domain::Dct, Domain::Dct};
      break;
  }
}

void softmax_pixel(const Tensor& logits, std::size_t n, std::size_t y, std::size_t x, std::size_t& best, double& conf) {
  const std::size_t classes = logits.dim(1);
  best = 0;
  double top = logits.at(n, 0, y, x);
  for (std::size_t c = 1; c < classes; ++c)
    if (logits.at(n, c, y, x) > top) {
      top = logits.at(n, c, y, x);
      best = c;
    }
  double z = 0.0;
  for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits.at(n, c, y, x) - top);
  conf = 1.0 / z;
}

template <class T>
Grid<T> warp_grid(const Grid<T>& g, const std::vector<int>& to_from, int h, int w, T fill) {
  Grid<T> out(h, w, fill);
  for (std::size_t p = 0; p < out.data.size(); ++p)
    if (to_from[p] >= 0) out.data[p] = g.data[static_cast<std::size_t>(to_from[p])];
  return out;
}

}  // namespace

std::string to_string(Topology t) {
  for (const auto& info : kTopologies)
    if (info.topology == t) return info.tag;
  return "?";
}

Topology parse_topology(std::string_view tag) {
  for (const auto& info : kTopologies)
    if (tag == info.tag) return info.topology;
  throw std::invalid_argument("unknown topology '" + std::string(tag) + "'");
}

std::size_t topology_members(Topology t) {
  for (const auto& info : kTopologies)
    if (info.topology == t) return info.members;
  return 0;
}

CoTrainConfig resolve_config(CoTrainConfig cfg) {
  const std::size_t m = topology_members(cfg.topology);
  std::vector<Arch> archs;
  std::vector<Domain> domains;
  default_members(cfg.topology, archs, domains);
  if (cfg.archs.empty()) cfg.archs = archs;
  if (cfg.domains.empty()) cfg.domains = domains;
  if (cfg.tau.empty()) cfg.tau.assign(m, 0.0);
  if (cfg.archs.size() != m || cfg.domains.size() != m || cfg.tau.size() != m)
    throw std::invalid_argument("config: topology " + to_string(cfg.topology) + " needs " + std::to_string(m) +
                                " entries in archs, domains and tau");
  for (double t : cfg.tau)
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("config: tau values must be in [0, 1]");
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) throw std::invalid_argument("config: lambda must be >= 0");
  if (cfg.epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (cfg.batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
  if (cfg.width < 4 || cfg.width % 4 != 0) throw std::invalid_argument("config: width must be a positive multiple of 4");
  if (cfg.threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  const bool shared = cfg.topology == Topology::Shared2Head;
  for (std::size_t i = 0; i < m; ++i) {
    if ((cfg.archs[i] == Arch::Shared2Head) != shared)
      throw std::invalid_argument("config: shared-2head members belong to the shared2head topology only");
  }
  if (shared && cfg.domains[0] != cfg.domains[1])
    throw std::invalid_argument("config: both shared2head heads read the same input domain");
  if (cfg.topology == Topology::FixMatch && !cfg.use_strong_weak)
    throw std::invalid_argument("config: fixmatch requires use_strong_weak");
  const std::size_t nets = shared ? 1 : m;
  if (!cfg.init_seeds.empty() && cfg.init_seeds.size() != nets)
    throw std::invalid_argument("config: init_seeds needs one seed per network (" + std::to_string(nets) + ")");
  parse_ratio(cfg.ratio);
  return cfg;
}

std::string config_to_json(const CoTrainConfig& cfg) {
  json archs = json::array(), domains = json::array();
  for (Arch a : cfg.archs) archs.push_back(to_string(a));
  for (Domain d : cfg.domains) domains.push_back(to_string(d));
  json j = {{"topology", to_string(cfg.topology)},
            {"lambda", cfg.lambda},
            {"tau", cfg.tau},
            {"use_strong_weak", cfg.use_strong_weak},
            {"diff_strong_aug", cfg.diff_strong_aug},
            {"archs", archs},
            {"domains", domains},
            {"epochs", cfg.epochs},
            {"batch", cfg.batch},
            {"lr", cfg.lr},
            {"power", cfg.power},
            {"seed", cfg.seed},
            {"width", cfg.width},
            {"momentum", cfg.momentum},
            {"weight_decay", cfg.weight_decay},
            {"ratio", cfg.ratio},
            {"split_seed", cfg.split_seed},
            {"init_seeds", cfg.init_seeds},
            {"threads", cfg.threads}};
  return j.dump(2);
}

CoTrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  static const std::set<std::string> known = {"topology", "lambda",  "tau",          "use_strong_weak", "diff_strong_aug",
                                              "archs",    "domains", "epochs",       "batch",           "lr",
                                              "power",    "seed",    "width",        "momentum",        "weight_decay",
                                              "ratio",    "split_seed", "init_seeds", "threads"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
  CoTrainConfig cfg;
  try {
    if (j.contains("topology")) cfg.topology = parse_topology(j["topology"].get<std::string>());
    if (cfg.topology == Topology::FixMatch) cfg.use_strong_weak = true;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("lambda", cfg.lambda);
    if (j.contains("tau")) {
      if (j["tau"].is_number()) cfg.tau.assign(topology_members(cfg.topology), j["tau"].get<double>());
      else cfg.tau = j["tau"].get<std::vector<double>>();
    }
    get("use_strong_weak", cfg.use_strong_weak);
    get("diff_strong_aug", cfg.diff_strong_aug);
    if (j.contains("archs"))
      for (const auto& a : j["archs"]) cfg.archs.push_back(parse_arch(a.get<std::string>()));
    if (j.contains("domains"))
      for (const auto& d : j["domains"]) cfg.domains.push_back(parse_domain(d.get<std::string>()));
    get("epochs", cfg.epochs);
    get("batch", cfg.batch);
    get("lr", cfg.lr);
    get("power", cfg.power);
    get("seed", cfg.seed);
    get("width", cfg.width);
    get("momentum", cfg.momentum);
    get("weight_decay", cfg.weight_decay);
    get("ratio", cfg.ratio);
    get("split_seed", cfg.split_seed);
    get("init_seeds", cfg.init_seeds);
    get("threads", cfg.threads);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return resolve_config(cfg);
}

CoTrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::vector<PseudoLabel> pseudo_label(const Tensor& logits, std::size_t producer) {
  if (logits.rank() != 4) throw ShapeError("pseudo_label: expected NxCxHxW logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  std::vector<PseudoLabel> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    PseudoLabel& p = out[s];
    p.producer = producer;
    p.labels = LabelMap(static_cast<int>(h), static_cast<int>(w));
    p.confidence = Grid<double>(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t best = 0;
        double conf = 0.0;
        softmax_pixel(logits, s, y, x, best, conf);
        p.labels(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint8_t>(best);
        p.confidence(static_cast<int>(y), static_cast<int>(x)) = conf;
      }
  }
  return out;
}

PseudoLabel warp_pseudo(const PseudoLabel& p, const std::vector<int>& to_from, const GeomRecord& to) {
  if (to_from.size() != static_cast<std::size_t>(to.crop_h) * to.crop_w)
    throw std::invalid_argument("warp_pseudo: index map does not match the target view");
  PseudoLabel out;
  out.producer = p.producer;
  out.geom = to;
  out.labels = warp_grid<std::uint8_t>(p.labels, to_from, to.crop_h, to.crop_w, kIgnoreLabel);
  out.confidence = warp_grid<double>(p.confidence, to_from, to.crop_h, to.crop_w, 0.0);
  return out;
}

double supervised_loss(std::span<const Tensor> logits_per_member, std::span<const LabelMap> labels) {
  if (logits_per_member.empty()) throw std::invalid_argument("supervised_loss: no members");
  double sum = 0.0;
  for (const Tensor& l : logits_per_member) sum += pixel_cross_entropy(l, labels).loss;
  return sum / static_cast<double>(logits_per_member.size());
}

GatedTerm gated_cross_entropy(const Tensor& logits, std::span<const PseudoLabel> targets, double tau) {
  if (logits.rank() != 4 || logits.dim(0) != targets.size())
    throw ShapeError("gated_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " pseudo labels");
  std::vector<LabelMap> gated;
  gated.reserve(targets.size());
  std::size_t eligible = 0;
  for (const PseudoLabel& p : targets) {
    if (p.labels.height != static_cast<int>(logits.dim(2)) || p.labels.width != static_cast<int>(logits.dim(3)) ||
        p.confidence.height != p.labels.height || p.confidence.width != p.labels.width)
      throw ShapeError("gated_cross_entropy: pseudo label geometry does not match logits " + shape_str(logits.shape()));
    LabelMap g = p.labels;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (g.data[i] == kIgnoreLabel) continue;
      ++eligible;
      if (!(p.confidence.data[i] > tau)) g.data[i] = kIgnoreLabel;
    }
    gated.push_back(std::move(g));
  }
  GatedTerm out;
  LossResult r = pixel_cross_entropy(logits, gated);
  out.retained = r.valid;
  out.eligible = eligible;
  out.grad = std::move(r.grad);
  if (r.valid == 0) {
    out.grad.fill(0.0);
    return out;
  }
  const double scale = static_cast<double>(r.valid) / static_cast<double>(eligible);
  out.loss = r.loss * scale;
  for (double& g : out.grad.values()) g *= scale;
  return out;
}

CrossSupResult cross_sup_loss(std::span<const Tensor> consumer_logits,
                              const std::vector<std::vector<std::vector<PseudoLabel>>>& targets,
                              std::span<const double> tau) {
  const std::size_t m = consumer_logits.size();
  if (targets.size() != m || tau.size() != m)
    throw std::invalid_argument("cross_sup_loss: members, targets and tau must have the same length");
  CrossSupResult out;
  out.per_member.assign(m, 0.0);
  out.grads.resize(m);
  out.retained.assign(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i].size() != m) throw std::invalid_argument("cross_sup_loss: targets[i] needs one slot per producer");
    std::size_t producers = 0;
    for (std::size_t j = 0; j < m; ++j) producers += !targets[i][j].empty();
    if (producers == 0) continue;
    Tensor grad(consumer_logits[i].shape());
    double loss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (targets[i][j].empty()) continue;
      const GatedTerm t = gated_cross_entropy(consumer_logits[i], targets[i][j], tau[j]);
      loss += t.loss;
      grad += t.grad;
      out.retained[i] += t.retained;
    }
    const double inv = 1.0 / static_cast<double>(producers);
    out.per_member[i] = loss * inv;
    for (double& g : grad.values()) g *= inv;
    out.grads[i] = std::move(grad);
    out.total += out.per_member[i];
  }
  return out;
}

Trainer::Trainer(CoTrainConfig cfg, const Dataset& data, Partition partition)
    : cfg_(resolve_config(std::move(cfg))), data_(data), partition_(std::move(partition)) {
  if (partition_.labeled.empty()) throw std::invalid_argument("Trainer: partition has no labeled samples");
  const std::size_t m = topology_members(cfg_.topology);
  const bool shared = cfg_.topology == Topology::Shared2Head;
  const std::size_t net_count = shared ? 1 : m;
  for (std::size_t n = 0; n < net_count; ++n) {
    const std::uint64_t seed = cfg_.init_seeds.empty() ? derive_seed(cfg_.seed, {kInitStream, n}) : cfg_.init_seeds[n];
    init_seeds_.push_back(seed);
    nets_.push_back(build_network(cfg_.archs[n], cfg_.domains[n], data_.options.classes, cfg_.width, seed,
                                  data_.options.size));
  }
  for (std::size_t i = 0; i < m; ++i) {
    member_net_.push_back(shared ? 0 : i);
    member_head_.push_back(shared ? i : 0);
  }
  const std::size_t pool = partition_.unlabeled.empty() ? partition_.labeled.size() : partition_.unlabeled.size();
  steps_per_epoch_ = std::max<long long>(1, static_cast<long long>(pool) / cfg_.batch);
}

std::string Trainer::stream_seeds_json() const {
  json j = {{"init", init_seeds_},
            {"labeled_order", derive_seed(cfg_.seed, {kLabeledOrder})},
            {"unlabeled_order", derive_seed(cfg_.seed, {kUnlabeledOrder})},
            {"labeled_view", derive_seed(cfg_.seed, {kLabeledView})},
            {"weak_view", derive_seed(cfg_.seed, {kWeakView})},
            {"strong_view", derive_seed(cfg_.seed, {kStrongView})},
            {"cutmix", derive_seed(cfg_.seed, {kCutMix})},
            {"split", cfg_.split_seed}};
  return j.dump();
}

Trainer::Batch Trainer::batch_at(int epoch, long long step) const {
  Batch b;
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch);
  const auto& lab = partition_.labeled;
  // The labeled set cycles: draw g of the run comes from cycle g / |L|.
  std::map<std::uint64_t, std::vector<int>> orders;
  for (std::size_t k = 0; k < bs; ++k) {
    const std::uint64_t g = (static_cast<std::uint64_t>(epoch) * steps_per_epoch_ + step) * bs + k;
    const std::uint64_t cycle = g / lab.size();
    auto it = orders.find(cycle);
    if (it == orders.end()) {
      std::vector<int> order = lab;
      Rng rng(derive_seed(cfg_.seed, {kLabeledOrder, cycle}));
      rng.shuffle(std::span(order));
      it = orders.emplace(cycle, std::move(order)).first;
    }
    b.labeled.push_back(it->second[g % lab.size()]);
  }
  const auto& unl = partition_.unlabeled;
  if (unl.size() >= bs) {
    std::vector<int> order = unl;
    Rng rng(derive_seed(cfg_.seed, {kUnlabeledOrder, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span(order));
    for (std::size_t k = 0; k < bs; ++k) b.unlabeled.push_back(order[static_cast<std::size_t>(step) * bs + k]);
  }
  return b;
}

Tensor Trainer::network_input(std::size_t net, const std::vector<AugView>& views) const {
  std::vector<Tensor> xs(views.size());
  const Domain d = nets_[net].spec().domain;
  parallel_for(views.size(), cfg_.threads, [&](std::size_t s) { xs[s] = to_domain_input(views[s].image, d, data_.norm); });
  return stack(xs);
}

bool Trainer::member_trains(std::size_t m) const { return !(cfg_.topology == Topology::Distill && m == 1); }

std::vector<std::size_t> Trainer::unlabeled_consumers() const {
  switch (cfg_.topology) {
    case Topology::Supervised: return {};
    case Topology::FixMatch:
    case Topology::Distill: return {0};
    default: break;
  }
  std::vector<std::size_t> all(members());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

std::vector<std::size_t> Trainer::producers_for(std::size_t consumer) const {
  if (cfg_.topology == Topology::FixMatch) return {0};
  if (cfg_.topology == Topology::Distill) return {1};
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < members(); ++j)
    if (j != consumer) out.push_back(j);
  return out;
}

StepStats Trainer::run_step(int epoch, long long step, const StepOptions& options) {
  try {
    return step_impl(epoch, step, options);
  } catch (const NonFiniteError& e) {
    const long long global = static_cast<long long>(epoch) * steps_per_epoch_ + step;
    const std::string what = e.what();
    if (what.rfind("training step", 0) == 0) throw;
    throw NonFiniteError("training step " + std::to_string(global) + " (epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + "): " + what);
  }
}

StepStats Trainer::step_impl(int epoch, long long step, const StepOptions& options) {
  const std::size_t m = members();
  const int size = data_.options.size;
  const int threads = cfg_.threads;
  const Batch batch = batch_at(epoch, step);
  const long long global = static_cast<long long>(epoch) * steps_per_epoch_ + step;
  const long long total = std::max<long long>(1, static_cast<long long>(cfg_.epochs) * steps_per_epoch_);

  StepStats st;
  st.loss_sup.assign(m, kNaN);
  st.loss_unsup.assign(m, kNaN);
  st.retained.assign(m, 0);
  st.lr = poly_lr(cfg_.lr, std::min(global, total - 1), total, cfg_.power);

  for (auto& net : nets_) net.params().zero_grad();

  if (options.supervised) {
    const std::size_t bs = batch.labeled.size();
    std::vector<AugView> views(bs);
    parallel_for(bs, threads, [&](std::size_t s) {
      const Sample& smp = data_.sample(batch.labeled[s]);
      Rng rng(derive_seed(cfg_.seed, {kLabeledView, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step), s}));
      views[s] = weak_augment(smp.image, &smp.mask, static_cast<std::uint64_t>(smp.id), size, rng);
    });
    std::vector<LabelMap> labels(bs);
    for (std::size_t s = 0; s < bs; ++s) labels[s] = views[s].label;
    for (std::size_t n = 0; n < nets_.size(); ++n) {
      std::vector<std::size_t> ms;
      for (std::size_t i = 0; i < m; ++i)
        if (member_net_[i] == n && member_trains(i)) ms.push_back(i);
      if (ms.empty()) continue;
      Network::Tape tape;
      const auto logits = nets_[n].forward(network_input(n, views), tape, threads);
      std::vector<Tensor> grads(nets_[n].heads());
      for (std::size_t i : ms) {
        LossResult r = pixel_cross_entropy(logits[member_head_[i]], labels);
        st.loss_sup[i] = r.loss;
        grads[member_head_[i]] = std::move(r.grad);
      }
      nets_[n].backward(tape, grads, threads);
    }
  }

  const auto consumers = unlabeled_consumers();
  if (options.unlabeled && !consumers.empty() && !batch.unlabeled.empty()) {
    const std::size_t bs = batch.unlabeled.size();
    auto branch = [&](std::size_t i) { return cfg_.diff_strong_aug ? i : std::size_t{0}; };
    std::set<std::size_t> involved(consumers.begin(), consumers.end());
    for (std::size_t i : consumers)
      for (std::size_t j : producers_for(i)) involved.insert(j);
    std::set<std::size_t> branches;
    for (std::size_t i : involved) branches.insert(branch(i));

    std::map<std::size_t, std::vector<AugView>> weak, student;
    for (std::size_t b : branches) {
      std::vector<AugView> views(bs);
      parallel_for(bs, threads, [&](std::size_t s) {
        const Sample& smp = data_.sample(batch.unlabeled[s]);
        Rng rng(derive_seed(cfg_.seed, {kWeakView, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(smp.id), b}));
        views[s] = weak_augment(smp.image, nullptr, static_cast<std::uint64_t>(smp.id), size, rng);
      });
      weak[b] = std::move(views);
    }
    CutMixPlan plan;
    if (cfg_.use_strong_weak) {
      Rng mix_rng(derive_seed(cfg_.seed, {kCutMix, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step)}));
      plan = plan_cutmix(bs, size, size, mix_rng);
      for (std::size_t b : branches) {
        std::vector<AugView> views(bs);
        parallel_for(bs, threads, [&](std::size_t s) {
          Rng rng(derive_seed(cfg_.seed, {kStrongView, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(batch.unlabeled[s]), b}));
          views[s] = strong_augment(weak[b][s], rng);
        });
        std::vector<Tensor> images(bs);
        for (std::size_t s = 0; s < bs; ++s) images[s] = std::move(views[s].image);
        apply_cutmix(plan, images);
        for (std::size_t s = 0; s < bs; ++s) views[s].image = std::move(images[s]);
        student[b] = std::move(views);
      }
    }

    // Consumer forwards with tapes, keyed by (network, branch).
    std::map<std::pair<std::size_t, std::size_t>, std::pair<Network::Tape, std::vector<Tensor>>> taped;
    for (std::size_t i : consumers) {
      const auto key = std::make_pair(member_net_[i], branch(i));
      if (taped.count(key)) continue;
      auto& slot = taped[key];
      const auto& views = cfg_.use_strong_weak ? student[key.second] : weak[key.second];
      slot.second = nets_[key.first].forward(network_input(key.first, views), slot.first, threads);
    }
    // Producer logits on weak views (detached).
    std::map<std::pair<std::size_t, std::size_t>, std::vector<Tensor>> weak_logits;
    std::vector<std::vector<PseudoLabel>> pseudo(m);
    for (std::size_t j : involved) {
      bool produces = false;
      for (std::size_t i : consumers) {
        const auto p = producers_for(i);
        produces |= std::find(p.begin(), p.end(), j) != p.end();
      }
      if (!produces) continue;
      const auto key = std::make_pair(member_net_[j], branch(j));
      const std::vector<Tensor>* logits = nullptr;
      if (!cfg_.use_strong_weak && taped.count(key)) {
        logits = &taped[key].second;
      } else {
        auto it = weak_logits.find(key);
        if (it == weak_logits.end())
          it = weak_logits.emplace(key, nets_[key.first].forward(network_input(key.first, weak[key.second]), threads)).first;
        logits = &it->second;
      }
      pseudo[j] = pseudo_label((*logits)[member_head_[j]], j);
      for (std::size_t s = 0; s < bs; ++s) {
        PseudoLabel& p = pseudo[j][s];
        p.geom = weak[key.second][s].geom;
        const Mask valid = valid_region(p.geom);
        for (std::size_t px = 0; px < valid.data.size(); ++px)
          if (!valid.data[px]) p.labels.data[px] = kIgnoreLabel;
      }
    }

    std::vector<std::vector<std::vector<PseudoLabel>>> targets(m, std::vector<std::vector<PseudoLabel>>(m));
    std::vector<Tensor> consumer_logits(m);
    for (std::size_t i : consumers) {
      const auto key = std::make_pair(member_net_[i], branch(i));
      consumer_logits[i] = taped[key].second[member_head_[i]];
      for (std::size_t j : producers_for(i)) {
        std::vector<PseudoLabel> t(bs);
        for (std::size_t s = 0; s < bs; ++s) {
          const GeomRecord& gi = weak[branch(i)][s].geom;
          if (branch(i) == branch(j)) {
            t[s] = pseudo[j][s];
          } else {
            const Overlap ov = overlap_mask(gi, pseudo[j][s].geom);
            t[s] = warp_pseudo(pseudo[j][s], ov.a_to_b, gi);
          }
          if (!(t[s].geom == gi)) throw std::logic_error("cross supervision: pseudo label frame differs from consumer view");
        }
        if (cfg_.use_strong_weak) {
          std::vector<LabelMap> labels(bs);
          std::vector<Grid<double>> conf(bs);
          for (std::size_t s = 0; s < bs; ++s) {
            labels[s] = std::move(t[s].labels);
            conf[s] = std::move(t[s].confidence);
          }
          apply_cutmix(plan, labels);
          apply_cutmix(plan, conf);
          for (std::size_t s = 0; s < bs; ++s) {
            t[s].labels = std::move(labels[s]);
            t[s].confidence = std::move(conf[s]);
          }
        }
        targets[i][j] = std::move(t);
      }
    }
    for (std::size_t i = 0; i < m; ++i)
      if (consumer_logits[i].empty()) consumer_logits[i] = Tensor({bs, 1, 1, 1});
    const CrossSupResult cs = cross_sup_loss(consumer_logits, targets, cfg_.tau);
    for (std::size_t i : consumers) {
      st.loss_unsup[i] = cs.per_member[i];
      st.retained[i] = cs.retained[i];
    }
    for (auto& [key, slot] : taped) {
      std::vector<Tensor> grads(nets_[key.first].heads());
      bool any = false;
      for (std::size_t i : consumers) {
        if (member_net_[i] != key.first || branch(i) != key.second) continue;
        if (options.only_consumer >= 0 && static_cast<std::size_t>(options.only_consumer) != i) continue;
        Tensor g = cs.grads[i];
        for (double& v : g.values()) v *= cfg_.lambda;
        grads[member_head_[i]] = std::move(g);
        any = true;
      }
      if (any) nets_[key.first].backward(slot.first, grads, threads);
    }
  }

  double objective = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isnan(st.loss_sup[i])) objective += st.loss_sup[i];
    if (!std::isnan(st.loss_unsup[i])) objective += cfg_.lambda * st.loss_unsup[i];
  }
  if (!std::isfinite(objective))
    throw NonFiniteError("training step " + std::to_string(global) + " (epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + "): non-finite loss");

  if (options.update) {
    for (std::size_t n = 0; n < nets_.size(); ++n) {
      bool trains = false;
      for (std::size_t i = 0; i < m; ++i) trains |= member_net_[i] == n && member_trains(i);
      if (trains) sgd_update(nets_[n].params(), st.lr, cfg_.momentum, cfg_.weight_decay);
    }
  }
  return st;
}

EpochMetrics Trainer::train_epoch() {
  const std::size_t m = members();
  EpochMetrics out;
  std::vector<double> sup(m, 0.0), unsup(m, 0.0);
  std::vector<long long> nsup(m, 0), nunsup(m, 0);
  for (long long s = 0; s < steps_per_epoch_; ++s) {
    const StepStats st = run_step(epoch_, s);
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::isnan(st.loss_sup[i])) sup[i] += st.loss_sup[i], ++nsup[i];
      if (!std::isnan(st.loss_unsup[i])) unsup[i] += st.loss_unsup[i], ++nunsup[i];
    }
    out.lr = st.lr;
  }
  ++epoch_;
  out.epoch = epoch_;
  for (std::size_t i = 0; i < m; ++i) {
    out.loss_sup.push_back(nsup[i] ? sup[i] / static_cast<double>(nsup[i]) : kNaN);
    out.loss_unsup.push_back(nunsup[i] ? unsup[i] / static_cast<double>(nunsup[i]) : kNaN);
  }
  return out;
}

void Trainer::pretrain_teacher() {
  if (cfg_.topology != Topology::Distill) return;
  CoTrainConfig t = cfg_;
  t.topology = Topology::Supervised;
  t.archs = {cfg_.archs[1]};
  t.domains = {cfg_.domains[1]};
  t.tau = {cfg_.tau[1]};
  t.init_seeds = {init_seeds_[1]};
  Trainer teacher(t, data_, partition_);
  for (int e = 0; e < cfg_.epochs; ++e) teacher.train_epoch();
  nets_[1] = teacher.networks()[0];
}

std::vector<Tensor> Trainer::predict(const std::vector<int>& ids) const {
  std::vector<AugView> views(ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) {
    const Sample& smp = data_.sample(ids[s]);
    views[s] = identity_view(smp.image, &smp.mask, static_cast<std::uint64_t>(smp.id));
  }
  std::vector<std::vector<Tensor>> per_net(nets_.size());
  for (std::size_t n = 0; n < nets_.size(); ++n) per_net[n] = nets_[n].forward(network_input(n, views), cfg_.threads);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < members(); ++i) out.push_back(per_net[member_net_[i]][member_head_[i]]);
  return out;
}

EvalResult Trainer::evaluate(const std::vector<int>& ids) const {
  EvalResult r;
  if (ids.empty()) throw std::invalid_argument("evaluate: no evaluation samples");
  const auto logits = predict(ids);
  std::vector<LabelMap> gts;
  for (int id : ids) gts.push_back(data_.sample(id).mask);
  for (const Tensor& l : logits) {
    auto preds = argmax_labels(l);
    r.miou.push_back(miou(preds, gts, data_.options.classes).mean);
    r.predictions.push_back(std::move(preds));
  }
  r.pairs = diversity_trace(logits, epoch_);
  return r;
}

}  // namespace divcot
