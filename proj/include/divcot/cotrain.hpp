#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divcot/augment.hpp"
#include "divcot/dataset.hpp"
#include "divcot/diagnostics.hpp"
#include "divcot/network.hpp"

namespace divcot {

enum class Topology { Supervised, FixMatch, Cps2, Cps3, Shared2Head, Diverse2, Diverse3, Distill };

std::string to_string(Topology t);
Topology parse_topology(std::string_view tag);
/// Number of co-trained members (heads count as members for shared2head).
std::size_t topology_members(Topology t);

struct CoTrainConfig {
  Topology topology = Topology::Cps2;
  double lambda = 1.0;
  /// Per-member confidence thresholds; empty means 0 for every member.
  std::vector<double> tau;
  bool use_strong_weak = false;
  bool diff_strong_aug = false;
  /// Per-member input domains and architectures; empty picks the topology default.
  std::vector<Domain> domains;
  std::vector<Arch> archs;
  int epochs = 10;
  int batch = 8;
  double lr = 0.05;
  double power = 0.9;
  std::uint64_t seed = 0;

  int width = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string ratio = "1/16";
  std::uint64_t split_seed = 0;
  /// Explicit per-network init seeds; empty derives them from `seed`.
  std::vector<std::uint64_t> init_seeds;
  int threads = 1;
};

/// Fills defaults (tau, archs, domains) and checks every invariant.
CoTrainConfig resolve_config(CoTrainConfig cfg);

std::string config_to_json(const CoTrainConfig& cfg);
CoTrainConfig config_from_json(const std::string& text);
CoTrainConfig load_config(const std::string& path);

struct PseudoLabel {
  LabelMap labels;
  Grid<double> confidence;
  std::size_t producer = 0;
  GeomRecord geom;
};

/// Softmax argmax (lowest index on ties) and max probability, one per sample.
std::vector<PseudoLabel> pseudo_label(const Tensor& logits, std::size_t producer = 0);

/// Re-expresses a pseudo label in another view's frame via a flat index map
/// (`to_from[p]` is the source pixel for target pixel p, -1 for none).
PseudoLabel warp_pseudo(const PseudoLabel& p, const std::vector<int>& to_from, const GeomRecord& to);

/// Mean over members of the mean pixel cross entropy against ground truth.
double supervised_loss(std::span<const Tensor> logits_per_member, std::span<const LabelMap> labels);

/// Cross entropy of consumer logits against pseudo labels whose confidence
/// exceeds tau, summed over the retained pixels and divided by the number of
/// pixels carrying a pseudo label at all.
struct GatedTerm {
  double loss = 0.0;
  Tensor grad;
  std::size_t retained = 0, eligible = 0;
};
GatedTerm gated_cross_entropy(const Tensor& logits, std::span<const PseudoLabel> targets, double tau);

/// Unlabeled loss over members. targets[i][j] holds producer j's pseudo labels
/// in consumer i's frame (empty when j does not supervise i). Each member's
/// term averages its producers; `total` sums the member terms.
struct CrossSupResult {
  double total = 0.0;
  std::vector<double> per_member;
  std::vector<Tensor> grads;
  std::vector<std::size_t> retained;
};
CrossSupResult cross_sup_loss(std::span<const Tensor> consumer_logits,
                              const std::vector<std::vector<std::vector<PseudoLabel>>>& targets,
                              std::span<const double> tau);

struct StepOptions {
  bool update = true;
  bool supervised = true;
  bool unlabeled = true;
  /// When >= 0, only this member's unlabeled term is backpropagated.
  int only_consumer = -1;
};

struct StepStats {
  std::vector<double> loss_sup, loss_unsup;
  std::vector<std::size_t> retained;
  double lr = 0.0;
};

struct EpochMetrics {
  int epoch = 0;
  std::vector<double> loss_sup, loss_unsup;
  double lr = 0.0;
};

struct EvalResult {
  std::vector<double> miou;
  std::vector<DiversityReport> pairs;
  std::vector<std::vector<LabelMap>> predictions;
};

class Trainer {
 public:
  Trainer(CoTrainConfig cfg, const Dataset& data, Partition partition);

  const CoTrainConfig& config() const { return cfg_; }
  const Partition& partition() const { return partition_; }
  std::size_t members() const { return member_net_.size(); }
  std::vector<Network>& networks() { return nets_; }
  const std::vector<Network>& networks() const { return nets_; }
  std::size_t member_network(std::size_t m) const { return member_net_[m]; }
  std::size_t member_head(std::size_t m) const { return member_head_[m]; }
  int epoch() const { return epoch_; }
  long long steps_per_epoch() const { return steps_per_epoch_; }
  std::string stream_seeds_json() const;

  /// One optimization step at (epoch, step); batches and views are pure functions of those indices.
  StepStats run_step(int epoch, long long step, const StepOptions& options = {});
  EpochMetrics train_epoch();
  /// Trains the distillation teacher on labeled data alone (no-op for other topologies).
  void pretrain_teacher();

  /// Clean identity views of `ids`; logits per member, N x classes x H x W.
  std::vector<Tensor> predict(const std::vector<int>& ids) const;
  EvalResult evaluate(const std::vector<int>& ids) const;

 private:
  struct Batch {
    std::vector<int> labeled, unlabeled;
  };
  Batch batch_at(int epoch, long long step) const;
  StepStats step_impl(int epoch, long long step, const StepOptions& options);
  Tensor network_input(std::size_t net, const std::vector<AugView>& views) const;
  bool member_trains(std::size_t m) const;
  std::vector<std::size_t> unlabeled_consumers() const;
  std::vector<std::size_t> producers_for(std::size_t consumer) const;

  CoTrainConfig cfg_;
  const Dataset& data_;
  Partition partition_;
  std::vector<Network> nets_;
  std::vector<std::size_t> member_net_, member_head_;
  std::vector<std::uint64_t> init_seeds_;
  long long steps_per_epoch_ = 1;
  int epoch_ = 0;
};

}  // namespace divcot
