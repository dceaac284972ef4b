#include "pdvn/nnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pdvn/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pdvn {

namespace {

double elu(double x) { return x >= 0 ? x : std::expm1(x); }
double elu_prime(double x) { return x >= 0 ? 1.0 : std::exp(x); }

double sigmoid(double z) {
  if (z >= 0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 30) return z;
  if (z < -30) return std::exp(z);
  return std::log1p(std::exp(z));
}

// Dropout keep decision as a pure function of (seed, sample, unit); keeps the
// mask reproducible across forward/backward and finite differencing.
bool dropout_keep(uint64_t seed, int sample, int unit, double rate) {
  uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(sample) << 32) ^
                          static_cast<uint64_t>(unit) * 0x9e3779b97f4a7c15ull);
  return (static_cast<double>(h >> 11) * 0x1.0p-53) >= rate;
}

void check_batch(const Mlp& net, const InputBatch& batch) {
  if (batch.rows.empty()) throw std::invalid_argument("nnet: empty batch");
  for (const auto& row : batch.rows) {
    for (int i : row) {
      if (i < 0 || i >= net.in_dim) throw std::invalid_argument("nnet: input index out of range");
    }
  }
}

void check_loss_compat(const Mlp& net, const LossBatch& t, LossKind loss, int batch) {
  switch (loss) {
    case LossKind::CrossEntropy:
    case LossKind::MaskedCrossEntropy:
      if (net.head != OutputHead::Logits) {
        throw std::invalid_argument("nnet: CE losses require a logits head");
      }
      if (static_cast<int>(t.class_index.size()) != batch) {
        throw std::invalid_argument("nnet: class targets do not match batch");
      }
      if (loss == LossKind::MaskedCrossEntropy &&
          static_cast<int>(t.masks.size()) != batch) {
        throw std::invalid_argument("nnet: masks do not match batch");
      }
      for (int c : t.class_index) {
        if (c < 0 || c >= net.out_dim) throw std::invalid_argument("nnet: class out of range");
      }
      break;
    case LossKind::BinaryCrossEntropy:
      if (net.head != OutputHead::Sigmoid) {
        throw std::invalid_argument("nnet: BCE requires a sigmoid head");
      }
      if (net.out_dim != 1) throw std::invalid_argument("nnet: BCE requires out_dim 1");
      if (static_cast<int>(t.value.size()) != batch) {
        throw std::invalid_argument("nnet: value targets do not match batch");
      }
      for (double y : t.value) {
        if (!(y >= 0.0 && y <= 1.0)) {
          throw std::invalid_argument("nnet: BCE target outside [0,1]");
        }
      }
      break;
    case LossKind::MeanSquaredError:
      if (net.head == OutputHead::Sigmoid) {
        throw std::invalid_argument("nnet: MSE head must be softplus or logits");
      }
      if (net.out_dim != 1) throw std::invalid_argument("nnet: MSE requires out_dim 1");
      if (static_cast<int>(t.value.size()) != batch) {
        throw std::invalid_argument("nnet: value targets do not match batch");
      }
      break;
  }
}

}  // namespace

Mlp make_mlp(int in_dim, int hidden_dim, int out_dim, OutputHead head, uint64_t seed,
             double dropout) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) {
    throw std::invalid_argument("make_mlp: dimensions must be positive");
  }
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("make_mlp: dropout outside [0,1)");
  Mlp net;
  net.in_dim = in_dim;
  net.hidden_dim = hidden_dim;
  net.out_dim = out_dim;
  net.head = head;
  net.dropout = dropout;
  net.init_seed = seed;
  net.w1.resize(static_cast<size_t>(in_dim) * hidden_dim);
  net.b1.assign(hidden_dim, 0.0);
  net.w2.resize(static_cast<size_t>(hidden_dim) * out_dim);
  net.b2.assign(out_dim, 0.0);
  Rng rng(derive_seed(seed, 0x6d6c70696e6974ull));
  double s1 = std::sqrt(6.0 / in_dim);
  for (auto& w : net.w1) w = rng.symmetric(s1);
  double s2 = std::sqrt(6.0 / hidden_dim);
  for (auto& w : net.w2) w = rng.symmetric(s2);
  return net;
}

void Gradients::match(const Mlp& net) {
  w1.assign(net.w1.size(), 0.0);
  b1.assign(net.b1.size(), 0.0);
  w2.assign(net.w2.size(), 0.0);
  b2.assign(net.b2.size(), 0.0);
}

void Gradients::zero() {
  std::fill(w1.begin(), w1.end(), 0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  std::fill(w2.begin(), w2.end(), 0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

namespace {

// Hidden activations for one sample; pre-activation derivatives are kept for
// the backward pass.
void hidden_forward(const Mlp& net, const std::vector<int>& active, bool train_mode,
                    uint64_t dropout_seed, int sample, double* h, double* dmask) {
  const int H = net.hidden_dim;
  for (int j = 0; j < H; ++j) h[j] = net.b1[j];
  for (int i : active) {
    const double* row = net.w1.data() + static_cast<size_t>(i) * H;
    for (int j = 0; j < H; ++j) h[j] += row[j];
  }
  const bool drop = train_mode && net.dropout > 0;
  const double scale = drop ? 1.0 / (1.0 - net.dropout) : 1.0;
  for (int j = 0; j < H; ++j) {
    double pre = h[j];
    double keep = 1.0;
    if (drop && !dropout_keep(dropout_seed, sample, j, net.dropout)) keep = 0.0;
    h[j] = elu(pre) * keep * scale;
    if (dmask != nullptr) dmask[j] = elu_prime(pre) * keep * scale;
  }
}

void output_forward(const Mlp& net, const double* h, double* z) {
  const int H = net.hidden_dim;
  const int K = net.out_dim;
  for (int k = 0; k < K; ++k) z[k] = net.b2[k];
  for (int j = 0; j < H; ++j) {
    const double hj = h[j];
    if (hj == 0.0) continue;
    const double* row = net.w2.data() + static_cast<size_t>(j) * K;
    for (int k = 0; k < K; ++k) z[k] += hj * row[k];
  }
}

double apply_head(OutputHead head, double z) {
  switch (head) {
    case OutputHead::Logits: return z;
    case OutputHead::Sigmoid: return sigmoid(z);
    case OutputHead::Softplus: return softplus(z);
  }
  return z;
}

// Loss and dL/dz for one sample. `z` is the raw pre-head output.
double sample_loss(const Mlp& net, const LossBatch& t, LossKind loss, int s, const double* z,
                   double* dz) {
  const int K = net.out_dim;
  switch (loss) {
    case LossKind::CrossEntropy:
    case LossKind::MaskedCrossEntropy: {
      const int target = t.class_index[s];
      static const std::vector<int> kNoMask;
      const std::vector<int>& mask =
          loss == LossKind::MaskedCrossEntropy ? t.masks[s] : kNoMask;
      auto for_support = [&](auto&& fn) {
        if (loss == LossKind::MaskedCrossEntropy) {
          for (int k : mask) {
            if (k < 0 || k >= K) throw std::invalid_argument("nnet: mask index out of range");
            fn(k);
          }
        } else {
          for (int k = 0; k < K; ++k) fn(k);
        }
      };
      if (loss == LossKind::MaskedCrossEntropy) {
        if (mask.empty()) throw std::invalid_argument("nnet: empty mask row");
        if (std::find(mask.begin(), mask.end(), target) == mask.end()) {
          throw std::invalid_argument("nnet: masked-CE target outside mask");
        }
      }
      double zmax = -1e300;
      for_support([&](int k) { zmax = std::max(zmax, z[k]); });
      double sum = 0;
      for_support([&](int k) { sum += std::exp(z[k] - zmax); });
      const double logsum = zmax + std::log(sum);
      if (dz != nullptr) {
        for_support([&](int k) { dz[k] = std::exp(z[k] - logsum); });
        dz[target] -= 1.0;
      }
      return logsum - z[target];
    }
    case LossKind::BinaryCrossEntropy: {
      const double y = t.value[s];
      const double zz = z[0];
      // max(z,0) - z*y + log(1+exp(-|z|)), numerically stable BCE-with-logits.
      const double loss_val = std::max(zz, 0.0) - zz * y + std::log1p(std::exp(-std::abs(zz)));
      if (dz != nullptr) dz[0] = sigmoid(zz) - y;
      return loss_val;
    }
    case LossKind::MeanSquaredError: {
      const double y = t.value[s];
      const double v = apply_head(net.head, z[0]);
      const double diff = v - y;
      if (dz != nullptr) {
        const double dv = net.head == OutputHead::Softplus ? sigmoid(z[0]) : 1.0;
        dz[0] = 2.0 * diff * dv;
      }
      return diff * diff;
    }
  }
  return 0;
}

}  // namespace

std::vector<double> forward(const Mlp& net, const InputBatch& batch, bool train_mode,
                            uint64_t dropout_seed, ThreadPool* pool) {
  check_batch(net, batch);
  const int B = batch.size();
  const int K = net.out_dim;
  std::vector<double> out(static_cast<size_t>(B) * K);
  parallel_chunks(pool, B, 16, [&](int64_t lo, int64_t hi, int) {
    std::vector<double> h(net.hidden_dim);
    for (int64_t s = lo; s < hi; ++s) {
      hidden_forward(net, batch.rows[s], train_mode, dropout_seed, static_cast<int>(s), h.data(),
                     nullptr);
      std::vector<double> z(K);
      output_forward(net, h.data(), z.data());
      for (int k = 0; k < K; ++k) out[s * K + k] = apply_head(net.head, z[k]);
    }
  });
  return out;
}

double loss_and_grad(const Mlp& net, const InputBatch& batch, const LossBatch& targets,
                     LossKind loss, Gradients* grads, bool train_mode, uint64_t dropout_seed,
                     ThreadPool* pool) {
  check_batch(net, batch);
  const int B = batch.size();
  check_loss_compat(net, targets, loss, B);
  const int H = net.hidden_dim;
  const int K = net.out_dim;
  const double inv_b = 1.0 / B;

  if (grads == nullptr) {
    // Loss-only path (finite differencing, validation).
    std::vector<double> partial;
    const int64_t chunk = 16;
    const int n_chunks = static_cast<int>((B + chunk - 1) / chunk);
    partial.assign(n_chunks, 0.0);
    parallel_chunks(pool, B, chunk, [&](int64_t lo, int64_t hi, int c) {
      std::vector<double> h(H), z(K);
      double acc = 0;
      for (int64_t s = lo; s < hi; ++s) {
        hidden_forward(net, batch.rows[s], train_mode, dropout_seed, static_cast<int>(s), h.data(),
                       nullptr);
        output_forward(net, h.data(), z.data());
        acc += sample_loss(net, targets, loss, static_cast<int>(s), z.data(), nullptr);
      }
      partial[c] = acc;
    });
    double total = 0;
    for (double p : partial) total += p;
    return total * inv_b;
  }

  grads->match(net);

  // Phase 1 over sample chunks: forward, output-layer gradients, and the
  // hidden-layer deltas needed by phase 2. w2/b2 partials are per-chunk and
  // merged in chunk order so results do not depend on the worker count.
  const int64_t chunk = 16;
  const int n_chunks = static_cast<int>((B + chunk - 1) / chunk);
  std::vector<double> hs(static_cast<size_t>(B) * H);
  std::vector<double> dpre(static_cast<size_t>(B) * H);  // delta at hidden pre-activation
  std::vector<std::vector<double>> gw2_parts(n_chunks), gb2_parts(n_chunks);
  std::vector<double> loss_parts(n_chunks, 0.0);

  parallel_chunks(pool, B, chunk, [&](int64_t lo, int64_t hi, int c) {
    auto& gw2 = gw2_parts[c];
    auto& gb2 = gb2_parts[c];
    gw2.assign(net.w2.size(), 0.0);
    gb2.assign(static_cast<size_t>(K), 0.0);
    std::vector<double> z(K), dz(K), dmask(H);
    double acc = 0;
    for (int64_t s = lo; s < hi; ++s) {
      double* h = hs.data() + s * H;
      hidden_forward(net, batch.rows[s], train_mode, dropout_seed, static_cast<int>(s), h, dmask.data());
      output_forward(net, h, z.data());
      std::fill(dz.begin(), dz.end(), 0.0);
      acc += sample_loss(net, targets, loss, static_cast<int>(s), z.data(), dz.data());
      for (int k = 0; k < K; ++k) dz[k] *= inv_b;
      double* dp = dpre.data() + s * H;
      for (int j = 0; j < H; ++j) {
        const double hj = h[j];
        const double* w2row = net.w2.data() + static_cast<size_t>(j) * K;
        double* gw2row = gw2.data() + static_cast<size_t>(j) * K;
        double dh = 0;
        for (int k = 0; k < K; ++k) {
          gw2row[k] += hj * dz[k];
          dh += w2row[k] * dz[k];
        }
        dp[j] = dh * dmask[j];
      }
      for (int k = 0; k < K; ++k) gb2[k] += dz[k];
    }
    loss_parts[c] = acc;
  });

  double total_loss = 0;
  for (int c = 0; c < n_chunks; ++c) {
    total_loss += loss_parts[c];
    for (size_t i = 0; i < grads->w2.size(); ++i) grads->w2[i] += gw2_parts[c][i];
    for (int k = 0; k < K; ++k) grads->b2[k] += gb2_parts[c][k];
  }

  // Phase 2 over hidden-unit blocks: each task owns a j-range, so w1/b1
  // writes are disjoint and deterministic.
  parallel_chunks(pool, H, 64, [&](int64_t jlo, int64_t jhi, int) {
    for (int s = 0; s < B; ++s) {
      const double* dp = dpre.data() + static_cast<size_t>(s) * H;
      for (int64_t j = jlo; j < jhi; ++j) grads->b1[j] += dp[j];
      for (int i : batch.rows[s]) {
        double* gw1row = grads->w1.data() + static_cast<size_t>(i) * H;
        for (int64_t j = jlo; j < jhi; ++j) gw1row[j] += dp[j];
      }
    }
  });

  return total_loss * inv_b;
}

AdamState AdamState::for_net(const Mlp& net, double lr) {
  AdamState st;
  st.lr = lr;
  st.m.assign(net.param_count(), 0.0);
  st.v.assign(net.param_count(), 0.0);
  return st;
}

namespace {

void adam_segment(std::vector<double>& params, AdamState& st, const std::vector<double>& grads,
                  size_t offset, double bc1, double bc2, ThreadPool* pool) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: shape mismatch");
  if (offset + params.size() > st.m.size()) throw std::invalid_argument("adam: state too small");
  const double lr = st.lr, b1 = st.beta1, b2 = st.beta2, eps = st.eps;
  parallel_chunks(pool, static_cast<int64_t>(params.size()), 16384,
                  [&](int64_t lo, int64_t hi, int) {
                    for (int64_t i = lo; i < hi; ++i) {
                      const double g = grads[i];
                      double& m = st.m[offset + i];
                      double& v = st.v[offset + i];
                      m = b1 * m + (1 - b1) * g;
                      v = b2 * v + (1 - b2) * g * g;
                      params[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
                    }
                  });
}

void check_finite(const std::vector<double>& g) {
  for (double x : g) {
    if (!std::isfinite(x)) throw std::invalid_argument("adam: non-finite gradient");
  }
}

}  // namespace

void adam_update(std::vector<double>& params, AdamState& state, const std::vector<double>& grads,
                 size_t offset, ThreadPool* pool) {
  check_finite(grads);
  if (offset == 0) ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  adam_segment(params, state, grads, offset, bc1, bc2, pool);
}

void adam_step(Mlp& net, AdamState& state, const Gradients& grads, ThreadPool* pool) {
  check_finite(grads.w1);
  check_finite(grads.b1);
  check_finite(grads.w2);
  check_finite(grads.b2);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  size_t off = 0;
  adam_segment(net.w1, state, grads.w1, off, bc1, bc2, pool);
  off += net.w1.size();
  adam_segment(net.b1, state, grads.b1, off, bc1, bc2, pool);
  off += net.b1.size();
  adam_segment(net.w2, state, grads.w2, off, bc1, bc2, pool);
  off += net.w2.size();
  adam_segment(net.b2, state, grads.b2, off, bc1, bc2, pool);
}

double grad_check(const Mlp& net, const InputBatch& batch, const LossBatch& targets, LossKind loss,
                  int trials, uint64_t seed, bool train_mode, uint64_t dropout_seed) {
  if (trials < 1) throw std::invalid_argument("grad_check: trials must be positive");
  Gradients g;
  loss_and_grad(net, batch, targets, loss, &g, train_mode, dropout_seed);
  const size_t total = net.param_count();
  Rng rng(derive_seed(seed, 0x67726164ull));
  Mlp work = net;
  const double h = 1e-5;

  auto param_at = [&](Mlp& m, size_t idx) -> double& {
    if (idx < m.w1.size()) return m.w1[idx];
    idx -= m.w1.size();
    if (idx < m.b1.size()) return m.b1[idx];
    idx -= m.b1.size();
    if (idx < m.w2.size()) return m.w2[idx];
    idx -= m.w2.size();
    return m.b2[idx];
  };
  auto grad_at = [&](size_t idx) -> double {
    if (idx < g.w1.size()) return g.w1[idx];
    idx -= g.w1.size();
    if (idx < g.b1.size()) return g.b1[idx];
    idx -= g.b1.size();
    if (idx < g.w2.size()) return g.w2[idx];
    idx -= g.w2.size();
    return g.b2[idx];
  };

  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const size_t idx = rng.below(total);
    double& p = param_at(work, idx);
    const double saved = p;
    p = saved + h;
    const double up = loss_and_grad(work, batch, targets, loss, nullptr, train_mode, dropout_seed);
    p = saved - h;
    const double dn = loss_and_grad(work, batch, targets, loss, nullptr, train_mode, dropout_seed);
    p = saved;
    const double fd = (up - dn) / (2 * h);
    const double an = grad_at(idx);
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-10});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

namespace {

constexpr char kMagic[8] = {'P', 'D', 'V', 'N', 'N', 'E', 'T', '1'};

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_vec(std::string& buf, const std::vector<double>& v) {
  buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw CheckpointError("truncated file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void take_vec(const std::string& buf, size_t& pos, std::vector<double>& v, size_t n) {
  if (pos + n * sizeof(double) > buf.size()) throw CheckpointError("truncated parameters");
  v.resize(n);
  std::memcpy(v.data(), buf.data() + pos, n * sizeof(double));
  pos += n * sizeof(double);
}

}  // namespace

void save_mlp(const Mlp& net, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put<uint32_t>(buf, 1);
  put<uint32_t>(buf, static_cast<uint32_t>(net.head));
  put<uint32_t>(buf, static_cast<uint32_t>(net.in_dim));
  put<uint32_t>(buf, static_cast<uint32_t>(net.hidden_dim));
  put<uint32_t>(buf, static_cast<uint32_t>(net.out_dim));
  put<double>(buf, net.dropout);
  put<uint64_t>(buf, net.init_seed);
  put<uint64_t>(buf, net.param_count());
  put_vec(buf, net.w1);
  put_vec(buf, net.b1);
  put_vec(buf, net.w2);
  put_vec(buf, net.b2);
  const uint64_t checksum = fnv1a64(buf.data(), buf.size());
  put<uint64_t>(buf, checksum);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(uint64_t)) throw CheckpointError("file too small");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad magic in " + path.string());
  }
  const size_t payload = buf.size() - sizeof(uint64_t);
  uint64_t stored;
  std::memcpy(&stored, buf.data() + payload, sizeof(stored));
  if (fnv1a64(buf.data(), payload) != stored) {
    throw CheckpointError("checksum mismatch in " + path.string());
  }

  size_t pos = sizeof(kMagic);
  const auto version = take<uint32_t>(buf, pos);
  if (version != 1) throw CheckpointError("unsupported version");
  Mlp net;
  net.head = static_cast<OutputHead>(take<uint32_t>(buf, pos));
  net.in_dim = static_cast<int>(take<uint32_t>(buf, pos));
  net.hidden_dim = static_cast<int>(take<uint32_t>(buf, pos));
  net.out_dim = static_cast<int>(take<uint32_t>(buf, pos));
  net.dropout = take<double>(buf, pos);
  net.init_seed = take<uint64_t>(buf, pos);
  const auto count = take<uint64_t>(buf, pos);
  take_vec(buf, pos, net.w1, static_cast<size_t>(net.in_dim) * net.hidden_dim);
  take_vec(buf, pos, net.b1, static_cast<size_t>(net.hidden_dim));
  take_vec(buf, pos, net.w2, static_cast<size_t>(net.hidden_dim) * net.out_dim);
  take_vec(buf, pos, net.b2, static_cast<size_t>(net.out_dim));
  if (count != net.param_count()) throw CheckpointError("parameter count mismatch");
  if (pos != payload) throw CheckpointError("trailing bytes");
  return net;
}

}  // namespace pdvn
