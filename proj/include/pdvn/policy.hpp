#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "pdvn/nnet.hpp"
#include "pdvn/synthworld.hpp"

namespace pdvn {

// Frozen reference single-step model plus a learnable copy. The reference
// fixes the realistic action set (its top-k valid templates); the learnable
// branch redistributes probability inside that set.
struct TwoBranchPolicy {
  Mlp reference;
  Mlp learnable;
  int top_k = 50;

  static TwoBranchPolicy from_reference(Mlp reference_model, int top_k = 50) {
    TwoBranchPolicy p;
    p.learnable = reference_model;
    p.reference = std::move(reference_model);
    p.top_k = top_k;
    return p;
  }
};

// Top-k template indices by reference logit (ties by ascending index),
// before any validity filtering.
std::vector<TemplateId> reference_top_k(const Mlp& reference, const Molecule& m, int k);

// Realistic proposals for a non-terminal molecule: reference top-k
// intersected with the applicable templates, scored by the learnable branch
// and softmax-renormalized over the survivors. Sorted by descending prior
// (ties ascending template). Empty result means no realistic action exists.
std::vector<Expansion> propose(const TwoBranchPolicy& policy, const WorldSpec& world,
                               const Molecule& m);

struct PretrainConfig {
  int epochs = 8;
  int mini_batch = 32;
  double lr = 1e-3;
  double val_fraction = 0.1;
  int hidden_dim = 512;
  double dropout = 0.1;
  uint64_t seed = 0;
};

struct SlReport {
  int train_pairs = 0;
  int val_pairs = 0;
  double first_epoch_loss = 0;
  double last_epoch_loss = 0;
  double top1_train = 0;
  double top1_val = 0;
  double top50_val = 0;

  std::string to_text() const;
};

// Cross-entropy training of the single-step reference model on
// (molecule, template) pairs. The returned model seeds both policy branches.
Mlp pretrain_reference(const WorldSpec& world,
                       const std::vector<std::pair<Molecule, TemplateId>>& corpus,
                       const PretrainConfig& cfg, SlReport* report = nullptr,
                       ThreadPool* pool = nullptr);

// Caches per-molecule proposals and leaf values. Entries are pure functions
// of the molecule for fixed network parameters; call clear() after any
// parameter update. Thread-safe.
class EvalCache {
 public:
  std::shared_ptr<const std::vector<Expansion>> proposals(const TwoBranchPolicy& policy,
                                                          const WorldSpec& world,
                                                          const Molecule& m);

  // (v_syn, v_cost) network estimates, before terminal shortcuts.
  std::pair<double, double> leaf_values(const Mlp* syn, const Mlp* cost, const Molecule& m);

  void clear();

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<const std::vector<Expansion>>> props_;
  std::unordered_map<std::string, std::pair<double, double>> values_;
};

}  // namespace pdvn
