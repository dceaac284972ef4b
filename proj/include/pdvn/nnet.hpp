#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pdvn/parallel.hpp"

namespace pdvn {

enum class OutputHead { Logits, Sigmoid, Softplus };

enum class LossKind { CrossEntropy, MaskedCrossEntropy, BinaryCrossEntropy, MeanSquaredError };

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error("checkpoint: " + what) {}
};

// Two-layer ELU MLP over binary feature vectors. Inputs are given as active
// bit indices; weights are double precision throughout.
struct Mlp {
  int in_dim = 0;
  int hidden_dim = 0;
  int out_dim = 0;
  OutputHead head = OutputHead::Logits;
  double dropout = 0.1;
  uint64_t init_seed = 0;

  std::vector<double> w1;  // [in_dim][hidden_dim], row-major by input index
  std::vector<double> b1;  // [hidden_dim]
  std::vector<double> w2;  // [hidden_dim][out_dim]
  std::vector<double> b2;  // [out_dim]

  size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// He-style uniform fan-in initialization, biases zero.
Mlp make_mlp(int in_dim, int hidden_dim, int out_dim, OutputHead head, uint64_t seed,
             double dropout = 0.1);

// One row per sample: indices of active input bits, strictly ascending.
struct InputBatch {
  std::vector<std::vector<int>> rows;

  int size() const { return static_cast<int>(rows.size()); }
};

// Targets for the four loss heads. class_index is used by CE and masked-CE
// (masks must then hold the per-row valid-class set, ascending); value is
// used by BCE and MSE.
struct LossBatch {
  std::vector<int> class_index;
  std::vector<std::vector<int>> masks;
  std::vector<double> value;
};

struct Gradients {
  std::vector<double> w1, b1, w2, b2;

  void match(const Mlp& net);
  void zero();
};

// Head-activated outputs, row-major [batch][out_dim]. In train mode a
// dropout mask derived from dropout_seed is applied to the hidden layer.
std::vector<double> forward(const Mlp& net, const InputBatch& batch, bool train_mode,
                            uint64_t dropout_seed = 0, ThreadPool* pool = nullptr);

// Mean loss over the batch; gradients for every parameter accumulated into
// `grads` (pass nullptr for loss-only evaluation).
double loss_and_grad(const Mlp& net, const InputBatch& batch, const LossBatch& targets,
                     LossKind loss, Gradients* grads, bool train_mode = false,
                     uint64_t dropout_seed = 0, ThreadPool* pool = nullptr);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<double> m, v;

  static AdamState for_net(const Mlp& net, double lr = 1e-3);
};

// Raw bias-corrected Adam update on a flat parameter array.
void adam_update(std::vector<double>& params, AdamState& state, const std::vector<double>& grads,
                 size_t offset, ThreadPool* pool = nullptr);

// Applies one Adam step to all four parameter blocks. Throws on non-finite
// gradients; no silent clipping.
void adam_step(Mlp& net, AdamState& state, const Gradients& grads, ThreadPool* pool = nullptr);

// Worst relative error between analytic and central finite-difference
// gradients over `trials` sampled parameter coordinates (h = 1e-5).
double grad_check(const Mlp& net, const InputBatch& batch, const LossBatch& targets, LossKind loss,
                  int trials, uint64_t seed, bool train_mode = false, uint64_t dropout_seed = 0);

// Versioned binary checkpoint with trailing FNV-1a checksum.
void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace pdvn
