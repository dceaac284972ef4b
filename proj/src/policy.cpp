#include "pdvn/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pdvn/util.hpp"

namespace pdvn {

namespace {

InputBatch single_input(const Molecule& m) {
  InputBatch b;
  b.rows.push_back(featurize(m).active_bits());
  return b;
}

}  // namespace

std::vector<TemplateId> reference_top_k(const Mlp& reference, const Molecule& m, int k) {
  if (k < 1) throw std::invalid_argument("reference_top_k: k must be positive");
  const auto logits = forward(reference, single_input(m), /*train_mode=*/false);
  std::vector<TemplateId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TemplateId a, TemplateId b) {
    return logits[a] > logits[b];  // stable sort keeps ascending index on ties
  });
  if (static_cast<int>(order.size()) > k) order.resize(k);
  return order;
}

std::vector<Expansion> propose(const TwoBranchPolicy& policy, const WorldSpec& world,
                               const Molecule& m) {
  const auto valid = applicable_templates(world, m);
  if (valid.empty()) {
    throw std::invalid_argument("propose: molecule is terminal: " + m.id);
  }

  // Reference picks the realistic set first, then the validity filter drops
  // templates that do not actually match; the node may end up with fewer
  // than k (possibly zero) actions.
  const auto top = reference_top_k(policy.reference, m, policy.top_k);
  std::vector<TemplateId> survivors;
  for (TemplateId t : top) {
    if (std::binary_search(valid.begin(), valid.end(), t)) survivors.push_back(t);
  }
  if (survivors.empty()) return {};
  std::sort(survivors.begin(), survivors.end());

  const auto logits = forward(policy.learnable, single_input(m), /*train_mode=*/false);
  double zmax = -1e300;
  for (TemplateId t : survivors) zmax = std::max(zmax, logits[t]);
  double denom = 0;
  for (TemplateId t : survivors) denom += std::exp(logits[t] - zmax);

  std::vector<Expansion> out;
  out.reserve(survivors.size());
  for (TemplateId t : survivors) {
    Expansion e = apply_template(world, m, t);
    e.prior = std::exp(logits[t] - zmax) / denom;
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const Expansion& a, const Expansion& b) {
    if (a.prior != b.prior) return a.prior > b.prior;
    return a.tmpl < b.tmpl;
  });
  return out;
}

std::string SlReport::to_text() const {
  std::ostringstream os;
  os << "train_pairs\t" << train_pairs << "\n";
  os << "val_pairs\t" << val_pairs << "\n";
  os << "first_epoch_loss\t" << first_epoch_loss << "\n";
  os << "last_epoch_loss\t" << last_epoch_loss << "\n";
  os << "top1_train\t" << top1_train << "\n";
  os << "top1_val\t" << top1_val << "\n";
  os << "top50_val\t" << top50_val << "\n";
  return os.str();
}

namespace {

double topk_accuracy(const Mlp& net, const std::vector<std::vector<int>>& feats,
                     const std::vector<int>& labels, int k, ThreadPool* pool) {
  if (feats.empty()) return 0;
  InputBatch batch;
  batch.rows = feats;
  const auto logits = forward(net, batch, false, 0, pool);
  const int K = net.out_dim;
  int hits = 0;
  for (size_t s = 0; s < feats.size(); ++s) {
    const double* z = logits.data() + s * K;
    const double target = z[labels[s]];
    int above = 0;
    for (int j = 0; j < K; ++j) {
      if (z[j] > target || (z[j] == target && j < labels[s])) ++above;
    }
    if (above < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(feats.size());
}

}  // namespace

Mlp pretrain_reference(const WorldSpec& world,
                       const std::vector<std::pair<Molecule, TemplateId>>& corpus,
                       const PretrainConfig& cfg, SlReport* report, ThreadPool* pool) {
  if (corpus.empty()) throw std::invalid_argument("pretrain_reference: empty corpus");
  for (const auto& [m, t] : corpus) {
    if (t < 0 || t >= world.vocab_size()) {
      throw std::invalid_argument("pretrain_reference: template out of range");
    }
  }

  std::vector<std::vector<int>> feats(corpus.size());
  std::vector<int> labels(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    feats[i] = featurize(corpus[i].first).active_bits();
    labels[i] = corpus[i].second;
  }

  Rng rng(derive_seed(cfg.seed, 0x736c747261696eull));
  std::vector<int> perm(corpus.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  size_t val_n = static_cast<size_t>(cfg.val_fraction * static_cast<double>(corpus.size()));
  if (val_n >= corpus.size()) val_n = 0;
  std::vector<int> val_idx(perm.begin(), perm.begin() + val_n);
  std::vector<int> train_idx(perm.begin() + val_n, perm.end());

  Mlp net = make_mlp(kFingerprintBits, cfg.hidden_dim, world.vocab_size(), OutputHead::Logits,
                     derive_seed(cfg.seed, 0x7265666e6574ull), cfg.dropout);
  AdamState adam = AdamState::for_net(net, cfg.lr);

  double first_loss = 0, last_loss = 0;
  uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double epoch_loss = 0;
    int batches = 0;
    for (size_t b = 0; b < train_idx.size(); b += cfg.mini_batch) {
      InputBatch batch;
      LossBatch targets;
      const size_t e = std::min(train_idx.size(), b + cfg.mini_batch);
      for (size_t i = b; i < e; ++i) {
        batch.rows.push_back(feats[train_idx[i]]);
        targets.class_index.push_back(labels[train_idx[i]]);
      }
      Gradients grads;
      const double loss =
          loss_and_grad(net, batch, targets, LossKind::CrossEntropy, &grads, /*train_mode=*/true,
                        derive_seed(cfg.seed, 0x64726f70ull, step), pool);
      adam_step(net, adam, grads, pool);
      epoch_loss += loss;
      ++batches;
      ++step;
    }
    epoch_loss /= std::max(1, batches);
    if (epoch == 0) first_loss = epoch_loss;
    last_loss = epoch_loss;
  }

  if (report != nullptr) {
    report->train_pairs = static_cast<int>(train_idx.size());
    report->val_pairs = static_cast<int>(val_idx.size());
    report->first_epoch_loss = first_loss;
    report->last_epoch_loss = last_loss;
    auto gather = [&](const std::vector<int>& idx, std::vector<std::vector<int>>& f,
                      std::vector<int>& l) {
      for (int i : idx) {
        f.push_back(feats[i]);
        l.push_back(labels[i]);
      }
    };
    std::vector<std::vector<int>> tf, vf;
    std::vector<int> tl, vl;
    gather(train_idx, tf, tl);
    gather(val_idx, vf, vl);
    report->top1_train = topk_accuracy(net, tf, tl, 1, pool);
    report->top1_val = topk_accuracy(net, vf, vl, 1, pool);
    report->top50_val = topk_accuracy(net, vf, vl, 50, pool);
  }
  return net;
}

std::shared_ptr<const std::vector<Expansion>> EvalCache::proposals(const TwoBranchPolicy& policy,
                                                                   const WorldSpec& world,
                                                                   const Molecule& m) {
  {
    std::lock_guard lk(mu_);
    if (auto it = props_.find(m.id); it != props_.end()) return it->second;
  }
  auto value = std::make_shared<const std::vector<Expansion>>(propose(policy, world, m));
  std::lock_guard lk(mu_);
  auto [it, _] = props_.try_emplace(m.id, std::move(value));
  return it->second;
}

std::pair<double, double> EvalCache::leaf_values(const Mlp* syn, const Mlp* cost,
                                                 const Molecule& m) {
  {
    std::lock_guard lk(mu_);
    if (auto it = values_.find(m.id); it != values_.end()) return it->second;
  }
  InputBatch b;
  b.rows.push_back(featurize(m).active_bits());
  double vs = 1.0, vc = 0.0;
  if (syn != nullptr) vs = forward(*syn, b, false)[0];
  if (cost != nullptr) vc = forward(*cost, b, false)[0];
  std::pair<double, double> value{vs, vc};
  std::lock_guard lk(mu_);
  values_.try_emplace(m.id, value);
  return value;
}

void EvalCache::clear() {
  std::lock_guard lk(mu_);
  props_.clear();
  values_.clear();
}

}  // namespace pdvn
