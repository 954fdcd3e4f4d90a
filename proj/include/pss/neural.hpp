#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pss/imaging.hpp"
#include "pss/io.hpp"
#include "pss/rng.hpp"
#include "pss/tensor.hpp"

namespace pss::neural {

// --- layer interface ----------------------------------------------------------

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& in, bool training, Rng* rng) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Tensor<T>*> params() { return {}; }
  virtual std::vector<Tensor<T>*> grads() { return {}; }
  virtual std::string type() const = 0;
  virtual std::vector<double> config() const { return {}; }
  virtual double l2_factor() const { return 0.0; }

  void zero_grads() {
    for (Tensor<T>* g : grads()) g->fill(T{});
  }

  bool frozen = false;

 protected:
  [[noreturn]] void shape_error(const Tensor<T>& in, const char* expected) const {
    throw std::invalid_argument(type() + ": input shape " + in.shape_str() + ", expected " +
                                expected);
  }
};

namespace init {

template <typename T>
void uniform(Tensor<T>& t, double lo, double hi, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void he_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  uniform(t, -limit, limit, rng);
}

}  // namespace init

// --- layers ------------------------------------------------------------------

/// Lookup table (n_ids, dim). Input is a (B, L) tensor of integral id values;
/// id 0 is the padding row, held at zero and excluded from gradients.
template <typename T>
class Embedding : public Layer<T> {
 public:
  Embedding(std::size_t n_ids, std::size_t dim)
      : table_({n_ids, dim}), grad_({n_ids, dim}) {}

  void init_params(Rng& rng) {
    init::uniform(table_, -0.05, 0.05, rng);
    for (std::size_t e = 0; e < table_.dim(1); ++e) table_(0, e) = T{};
  }

  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 2) this->shape_error(in, "(B,L)");
    std::size_t B = in.dim(0), L = in.dim(1), E = table_.dim(1);
    ids_.assign(B * L, 0);
    Tensor<T> out({B, L, E});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        auto id = static_cast<long long>(std::llround(static_cast<double>(in(b, l))));
        if (id < 0 || id >= static_cast<long long>(table_.dim(0)))
          throw std::invalid_argument("Embedding: id " + std::to_string(id) + " out of range");
        ids_[b * L + l] = static_cast<std::size_t>(id);
        for (std::size_t e = 0; e < E; ++e) out(b, l, e) = table_(static_cast<std::size_t>(id), e);
      }
    in_shape_ = in.shape;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = grad_out.dim(0), L = grad_out.dim(1), E = grad_out.dim(2);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        std::size_t id = ids_[b * L + l];
        if (id == 0) continue;  // padding row stays zero
        for (std::size_t e = 0; e < E; ++e) grad_(id, e) += grad_out(b, l, e);
      }
    return Tensor<T>(in_shape_);  // ids carry no gradient
  }

  std::vector<Tensor<T>*> params() override { return {&table_}; }
  std::vector<Tensor<T>*> grads() override { return {&grad_}; }
  std::string type() const override { return "embedding"; }
  std::vector<double> config() const override {
    return {static_cast<double>(table_.dim(0)), static_cast<double>(table_.dim(1))};
  }

 private:
  Tensor<T> table_, grad_;
  std::vector<std::size_t> ids_;
  std::vector<std::size_t> in_shape_;
};

/// Valid 1-D convolution over (B, L, E) with weights (F, k, E): output
/// (B, L-k+1, F).
template <typename T>
class Conv1d : public Layer<T> {
 public:
  Conv1d(std::size_t filters, std::size_t kernel, std::size_t in_dim)
      : w_({filters, kernel, in_dim}),
        b_({filters}),
        gw_({filters, kernel, in_dim}),
        gb_({filters}) {}

  void init_params(Rng& rng) {
    init::he_uniform(w_, w_.dim(1) * w_.dim(2), rng);
    b_.fill(T{});
  }

  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 3 || in.dim(2) != w_.dim(2)) this->shape_error(in, "(B,L,E)");
    std::size_t B = in.dim(0), L = in.dim(1), E = w_.dim(2), K = w_.dim(1), F = w_.dim(0);
    if (L < K)
      throw std::invalid_argument("Conv1d: sequence length " + std::to_string(L) +
                                  " shorter than kernel " + std::to_string(K));
    std::size_t Lo = L - K + 1;
    in_ = in;
    Tensor<T> out({B, Lo, F});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Lo; ++t)
        for (std::size_t f = 0; f < F; ++f) {
          T acc = b_(f);
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t e = 0; e < E; ++e) acc += in(b, t + k, e) * w_(f, k, e);
          out(b, t, f) = acc;
        }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = in_.dim(0), L = in_.dim(1), E = w_.dim(2), K = w_.dim(1), F = w_.dim(0);
    std::size_t Lo = L - K + 1;
    Tensor<T> din(in_.shape);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < Lo; ++t)
        for (std::size_t f = 0; f < F; ++f) {
          T g = grad_out(b, t, f);
          gb_(f) += g;
          for (std::size_t k = 0; k < K; ++k)
            for (std::size_t e = 0; e < E; ++e) {
              gw_(f, k, e) += g * in_(b, t + k, e);
              din(b, t + k, e) += g * w_(f, k, e);
            }
        }
    return din;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string type() const override { return "conv1d"; }
  std::vector<double> config() const override {
    return {static_cast<double>(w_.dim(0)), static_cast<double>(w_.dim(1)),
            static_cast<double>(w_.dim(2))};
  }

 private:
  Tensor<T> w_, b_, gw_, gb_;
  Tensor<T> in_;
};

/// Same-padded 2-D convolution over (B, C, H, W) with odd square kernels.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::size_t out_c, std::size_t in_c, std::size_t kernel)
      : w_({out_c, in_c, kernel, kernel}),
        b_({out_c}),
        gw_({out_c, in_c, kernel, kernel}),
        gb_({out_c}) {
    if (kernel % 2 == 0) throw std::invalid_argument("Conv2d: kernel must be odd");
  }

  void init_params(Rng& rng) {
    init::he_uniform(w_, w_.dim(1) * w_.dim(2) * w_.dim(3), rng);
    b_.fill(T{});
  }

  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 4 || in.dim(1) != w_.dim(1)) this->shape_error(in, "(B,C,H,W)");
    std::size_t B = in.dim(0), C = w_.dim(1), H = in.dim(2), W = in.dim(3);
    std::size_t F = w_.dim(0), K = w_.dim(2);
    std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    in_ = in;
    Tensor<T> out({B, F, H, W});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            T acc = b_(f);
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < K; ++ky) {
                std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < K; ++kx) {
                  std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                  acc += in(b, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) *
                         w_(f, c, ky, kx);
                }
              }
            out(b, f, y, x) = acc;
          }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = in_.dim(0), C = w_.dim(1), H = in_.dim(2), W = in_.dim(3);
    std::size_t F = w_.dim(0), K = w_.dim(2);
    std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    Tensor<T> din(in_.shape);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            T g = grad_out(b, f, y, x);
            gb_(f) += g;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < K; ++ky) {
                std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < K; ++kx) {
                  std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
                  auto uy = static_cast<std::size_t>(sy), ux = static_cast<std::size_t>(sx);
                  gw_(f, c, ky, kx) += g * in_(b, c, uy, ux);
                  din(b, c, uy, ux) += g * w_(f, c, ky, kx);
                }
              }
          }
    return din;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string type() const override { return "conv2d"; }
  std::vector<double> config() const override {
    return {static_cast<double>(w_.dim(0)), static_cast<double>(w_.dim(1)),
            static_cast<double>(w_.dim(2))};
  }

 private:
  Tensor<T> w_, b_, gw_, gb_;
  Tensor<T> in_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    mask_.assign(in.numel(), 0);
    Tensor<T> out = in;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if (out(i) > T{}) mask_[i] = 1;
      else out(i) = T{};
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> din = grad_out;
    for (std::size_t i = 0; i < din.numel(); ++i)
      if (!mask_[i]) din(i) = T{};
    return din;
  }

  std::string type() const override { return "relu"; }

 private:
  std::vector<char> mask_;
};

/// Max over the time axis: (B, L, F) -> (B, F), argmax cached for backward.
template <typename T>
class GlobalMaxPool1d : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 3) this->shape_error(in, "(B,L,F)");
    std::size_t B = in.dim(0), L = in.dim(1), F = in.dim(2);
    in_shape_ = in.shape;
    arg_.assign(B * F, 0);
    Tensor<T> out({B, F});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f) {
        T best = in(b, 0, f);
        std::size_t best_t = 0;
        for (std::size_t t = 1; t < L; ++t)
          if (in(b, t, f) > best) {
            best = in(b, t, f);
            best_t = t;
          }
        out(b, f) = best;
        arg_[b * F + f] = best_t;
      }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = in_shape_[0], F = in_shape_[2];
    Tensor<T> din(in_shape_);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f) din(b, arg_[b * F + f], f) = grad_out(b, f);
    return din;
  }

  std::string type() const override { return "global_max_pool1d"; }

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> arg_;
};

/// 2x2 stride-2 max pooling over (B, C, H, W); H and W must be even.
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 4 || in.dim(2) % 2 != 0 || in.dim(3) % 2 != 0)
      this->shape_error(in, "(B,C,2h,2w)");
    std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    std::size_t Ho = H / 2, Wo = W / 2;
    in_shape_ = in.shape;
    arg_.assign(B * C * Ho * Wo, 0);
    Tensor<T> out({B, C, Ho, Wo});
    std::size_t idx = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t x = 0; x < Wo; ++x) {
            std::size_t best_off = 0;
            T best = in(b, c, 2 * y, 2 * x);
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                T v = in(b, c, 2 * y + dy, 2 * x + dx);
                if (v > best) {
                  best = v;
                  best_off = dy * 2 + dx;
                }
              }
            out(b, c, y, x) = best;
            arg_[idx++] = best_off;
          }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = in_shape_[0], C = in_shape_[1];
    std::size_t Ho = in_shape_[2] / 2, Wo = in_shape_[3] / 2;
    Tensor<T> din(in_shape_);
    std::size_t idx = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t x = 0; x < Wo; ++x) {
            std::size_t off = arg_[idx++];
            din(b, c, 2 * y + off / 2, 2 * x + off % 2) += grad_out(b, c, y, x);
          }
    return din;
  }

  std::string type() const override { return "max_pool2d"; }

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> arg_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    in_shape_ = in.shape;
    Tensor<T> out({in.dim(0), in.numel() / in.dim(0)});
    out.data = in.data;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> din(in_shape_);
    din.data = grad_out.data;
    return din;
  }

  std::string type() const override { return "flatten"; }

 private:
  std::vector<std::size_t> in_shape_;
};

/// Fully connected (In, Out) with optional L2 weight penalty consumed by the
/// training loop.
template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(std::size_t in_dim, std::size_t out_dim, double l2 = 0.0)
      : w_({in_dim, out_dim}), b_({out_dim}), gw_({in_dim, out_dim}), gb_({out_dim}), l2_(l2) {}

  void init_params(Rng& rng) {
    init::he_uniform(w_, w_.dim(0), rng);
    b_.fill(T{});
  }

  Tensor<T> forward(const Tensor<T>& in, bool, Rng*) override {
    if (in.rank() != 2 || in.dim(1) != w_.dim(0)) this->shape_error(in, "(B,In)");
    std::size_t B = in.dim(0), In = w_.dim(0), Out = w_.dim(1);
    in_ = in;
    Tensor<T> out({B, Out});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Out; ++o) {
        T acc = b_(o);
        for (std::size_t i = 0; i < In; ++i) acc += in(b, i) * w_(i, o);
        out(b, o) = acc;
      }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    std::size_t B = in_.dim(0), In = w_.dim(0), Out = w_.dim(1);
    Tensor<T> din({B, In});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Out; ++o) {
        T g = grad_out(b, o);
        gb_(o) += g;
        for (std::size_t i = 0; i < In; ++i) {
          gw_(i, o) += g * in_(b, i);
          din(b, i) += g * w_(i, o);
        }
      }
    return din;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string type() const override { return "dense"; }
  std::vector<double> config() const override {
    return {static_cast<double>(w_.dim(0)), static_cast<double>(w_.dim(1)), l2_};
  }
  double l2_factor() const override { return l2_; }
  const Tensor<T>& weights() const { return w_; }
  Tensor<T>& weights_mut() { return w_; }
  Tensor<T>& weight_grads_mut() { return gw_; }

 private:
  Tensor<T> w_, b_, gw_, gb_;
  Tensor<T> in_;
  double l2_;
};

/// Inverted dropout: at train time keeps each unit with probability 1-rate and
/// scales by 1/(1-rate); identity at inference.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("Dropout: rate must be in [0,1)");
  }

  Tensor<T> forward(const Tensor<T>& in, bool training, Rng* rng) override {
    if (!training || rate_ == 0.0) {
      active_ = false;
      return in;
    }
    if (!rng) throw std::logic_error("Dropout: training forward needs an rng");
    active_ = true;
    mask_.assign(in.numel(), T{});
    T scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> out = in;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if (rng->uniform() >= rate_) {
        mask_[i] = scale;
        out(i) *= scale;
      } else {
        out(i) = T{};
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    if (!active_) return grad_out;
    Tensor<T> din = grad_out;
    for (std::size_t i = 0; i < din.numel(); ++i) din(i) *= mask_[i];
    return din;
  }

  std::string type() const override { return "dropout"; }
  std::vector<double> config() const override { return {rate_}; }

 private:
  double rate_;
  bool active_ = false;
  std::vector<T> mask_;
};

// --- network -----------------------------------------------------------------

template <typename T>
struct Network {
  std::vector<std::unique_ptr<Layer<T>>> layers;

  Tensor<T> forward_range(std::size_t first, std::size_t last, Tensor<T> x, bool training,
                          Rng* rng) {
    for (std::size_t i = first; i < last; ++i) x = layers[i]->forward(x, training, rng);
    return x;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) {
    return forward_range(0, layers.size(), x, training, rng);
  }

  Tensor<T> backward_range(std::size_t first, std::size_t last, Tensor<T> g) {
    for (std::size_t i = last; i-- > first;) g = layers[i]->backward(g);
    return g;
  }

  void zero_grads(std::size_t first, std::size_t last) {
    for (std::size_t i = first; i < last; ++i) layers[i]->zero_grads();
  }

  void trainable(std::size_t first, std::size_t last, std::vector<Tensor<T>*>& params,
                 std::vector<Tensor<T>*>& grads) {
    params.clear();
    grads.clear();
    for (std::size_t i = first; i < last; ++i) {
      if (layers[i]->frozen) continue;
      auto p = layers[i]->params();
      auto g = layers[i]->grads();
      params.insert(params.end(), p.begin(), p.end());
      grads.insert(grads.end(), g.begin(), g.end());
    }
  }

  std::vector<Tensor<T>*> all_params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
};

// --- loss --------------------------------------------------------------------

inline double sigmoid_clamped(double z) {
  z = std::clamp(z, -15.0, 15.0);
  return 1.0 / (1.0 + std::exp(-z));
}

/// Mean binary cross-entropy on (B,1) logits; returns loss and per-row
/// probabilities.
template <typename T>
std::pair<double, std::vector<double>> sigmoid_bce_forward(const Tensor<T>& logits,
                                                           const std::vector<double>& targets) {
  if (logits.rank() != 2 || logits.dim(1) != 1 || logits.dim(0) != targets.size())
    throw std::invalid_argument("sigmoid_bce: logits must be (B,1) matching targets");
  std::size_t B = targets.size();
  std::vector<double> probs(B);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double p = sigmoid_clamped(static_cast<double>(logits(b, 0)));
    probs[b] = p;
    double y = targets[b];
    loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return {loss / static_cast<double>(B), probs};
}

/// d(mean BCE)/d(logit) = (p - y) / B, straight through the clamp.
template <typename T>
Tensor<T> sigmoid_bce_backward(const std::vector<double>& probs,
                               const std::vector<double>& targets) {
  std::size_t B = targets.size();
  Tensor<T> g({B, 1});
  for (std::size_t b = 0; b < B; ++b)
    g(b, 0) = static_cast<T>((probs[b] - targets[b]) / static_cast<double>(B));
  return g;
}

// --- optimizers ---------------------------------------------------------------

template <typename T>
class RmsProp {
 public:
  explicit RmsProp(double lr, double rho = 0.9, double eps = 1e-7)
      : lr_(lr), rho_(rho), eps_(eps) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads) {
    ensure_state(params);
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& p = *params[t];
      auto& g = *grads[t];
      auto& s = state_[t];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g(i));
        s[i] = rho_ * s[i] + (1.0 - rho_) * gi * gi;
        p(i) -= static_cast<T>(lr_ * gi / std::sqrt(s[i] + eps_));
      }
    }
  }

 private:
  void ensure_state(const std::vector<Tensor<T>*>& params) {
    if (!state_.empty()) return;
    for (auto* p : params) state_.emplace_back(p->numel(), 0.0);
  }

  double lr_, rho_, eps_;
  std::vector<std::vector<double>> state_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads) {
    ensure_state(params);
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& p = *params[t];
      auto& g = *grads[t];
      auto& m = m_[t];
      auto& v = v_[t];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g(i));
        m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p(i) -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  void ensure_state(const std::vector<Tensor<T>*>& params) {
    if (!m_.empty()) return;
    for (auto* p : params) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }

  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// --- training loop ------------------------------------------------------------

struct TrainOptions {
  int max_epochs = 100;
  int patience = 5;
  double val_fraction = 0.1;
  bool early_stopping = true;
  int batch = 32;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_loss;
  int best_epoch = -1;  // 0-based epoch whose weights were kept
};

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot_params(Network<T>& net) {
  std::vector<std::vector<T>> out;
  for (Tensor<T>* p : net.all_params()) out.push_back(p->data);
  return out;
}

template <typename T>
void restore_params(Network<T>& net, const std::vector<std::vector<T>>& snap) {
  auto params = net.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

template <typename T>
double l2_penalty(Network<T>& net, std::size_t first, std::size_t last,
                  bool add_gradients) {
  double total = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    double f = net.layers[i]->l2_factor();
    if (f <= 0.0 || net.layers[i]->frozen) continue;
    auto* dense = dynamic_cast<Dense<T>*>(net.layers[i].get());
    if (!dense) continue;
    auto& w = dense->weights_mut();
    auto& gw = dense->weight_grads_mut();
    for (std::size_t j = 0; j < w.numel(); ++j) {
      double wj = static_cast<double>(w(j));
      total += f * wj * wj;
      if (add_gradients) gw(j) += static_cast<T>(2.0 * f * wj);
    }
  }
  return total;
}

}  // namespace detail

/// Mini-batch binary training over an arbitrary layer range of a network.
/// gather(indices) must return the input batch for those example indices;
/// labels are 0/1. Early stopping holds out the tail of a seeded shuffle and
/// restores the best-validation-loss weights at the end.
template <typename T, typename Optimizer, typename GatherFn>
TrainHistory train_binary(Network<T>& net, std::size_t first_layer, std::size_t last_layer,
                          std::size_t n_examples, const GatherFn& gather,
                          const std::vector<double>& labels, Optimizer& opt,
                          const TrainOptions& options) {
  if (labels.size() != n_examples || n_examples == 0)
    throw std::invalid_argument("train_binary: labels/examples mismatch or empty");
  bool has_pos = false, has_neg = false;
  for (double y : labels) (y > 0.5 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_binary: need both classes in the training data");
  if (options.batch < 1) throw std::invalid_argument("train_binary: batch must be positive");

  std::vector<std::size_t> order(n_examples);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(options.seed, "val_split"));
  split_rng.shuffle(order);
  std::size_t n_val = 0;
  if (options.early_stopping)
    n_val = static_cast<std::size_t>(std::floor(options.val_fraction *
                                                static_cast<double>(n_examples)));
  std::size_t n_train = n_examples - n_val;
  if (n_train == 0) {
    n_train = n_examples;
    n_val = 0;
  }
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  auto run_batches = [&](const std::vector<std::size_t>& idx, bool training, Rng* rng,
                         double* accuracy_out) -> double {
    double loss_sum = 0.0;
    std::size_t n_batches = 0, n_correct = 0;
    std::size_t bs = static_cast<std::size_t>(options.batch);
    for (std::size_t start = 0; start < idx.size(); start += bs) {
      std::size_t end = std::min(idx.size(), start + bs);
      std::vector<std::size_t> batch(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                     idx.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<double> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
      Tensor<T> in = gather(batch);
      Tensor<T> logits = net.forward_range(first_layer, last_layer, std::move(in), training, rng);
      auto [loss, probs] = sigmoid_bce_forward(logits, y);
      if (training) {
        net.zero_grads(first_layer, last_layer);
        net.backward_range(first_layer, last_layer, sigmoid_bce_backward<T>(probs, y));
        loss += detail::l2_penalty<T>(net, first_layer, last_layer, true);
        std::vector<Tensor<T>*> params, grads;
        net.trainable(first_layer, last_layer, params, grads);
        opt.step(params, grads);
      } else {
        loss += detail::l2_penalty<T>(net, first_layer, last_layer, false);
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train_binary: non-finite loss encountered");
      loss_sum += loss;
      ++n_batches;
      for (std::size_t i = 0; i < batch.size(); ++i)
        if ((probs[i] > 0.5) == (y[i] > 0.5)) ++n_correct;
    }
    if (accuracy_out)
      *accuracy_out = static_cast<double>(n_correct) / static_cast<double>(idx.size());
    return loss_sum / static_cast<double>(n_batches);
  };

  Rng train_rng(derive_seed(options.seed, "train_loop"));
  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_snapshot;
  int patience_left = options.patience;
  for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
    train_rng.shuffle(train_idx);
    double acc = 0.0;
    double train_loss = run_batches(train_idx, true, &train_rng, &acc);
    history.train_loss.push_back(train_loss);
    history.train_accuracy.push_back(acc);
    if (n_val > 0) {
      double val_loss = run_batches(val_idx, false, nullptr, nullptr);
      history.val_loss.push_back(val_loss);
      if (val_loss < best_val) {
        best_val = val_loss;
        best_snapshot = detail::snapshot_params(net);
        history.best_epoch = epoch;
        patience_left = options.patience;
      } else if (--patience_left <= 0) {
        break;
      }
    }
  }
  if (!best_snapshot.empty())
    detail::restore_params(net, best_snapshot);
  else
    history.best_epoch = static_cast<int>(history.train_loss.size()) - 1;
  return history;
}

/// Inference probabilities over an indexed dataset, batched, dropout off.
template <typename T, typename GatherFn>
std::vector<double> predict_binary(Network<T>& net, std::size_t first_layer,
                                   std::size_t last_layer, std::size_t n_examples,
                                   const GatherFn& gather, int batch) {
  std::vector<double> out;
  out.reserve(n_examples);
  std::size_t bs = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t start = 0; start < n_examples; start += bs) {
    std::size_t end = std::min(n_examples, start + bs);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor<T> logits = net.forward_range(first_layer, last_layer, gather(idx), false, nullptr);
    for (std::size_t b = 0; b < idx.size(); ++b)
      out.push_back(sigmoid_clamped(static_cast<double>(logits(b, 0))));
  }
  return out;
}

// --- model construction -------------------------------------------------------

struct TextCnnConfig {
  int vocab_size = 0;  // pruned vocabulary size; embedding table adds pad+oov rows
  int embed_dim = 300;
  int filters = 350;
  int kernel = 3;
  int dense = 256;
  double dropout = 0.5;
  int max_seq_len = 512;
  double lr = 0.0002;
  int batch = 32;
};

struct ImageCnnConfig {
  std::vector<int> channels = {8, 16, 32, 64};  // conv blocks over 224x224x1
  int dense = 256;
  double dropout = 0.5;
  double lr = 0.0001;
  int batch = 32;
  bool backbone_frozen = true;
};

struct FusionMlpConfig {
  int input_dim = 0;
  int hidden = 256;
  double l2 = 0.01;
  double dropout = 0.5;
  double lr = 0.0005;
  int batch = 16;
};

namespace detail {

template <typename T, typename L>
L* add_layer(Network<T>& net, std::unique_ptr<L> layer) {
  L* raw = layer.get();
  net.layers.push_back(std::move(layer));
  return raw;
}

}  // namespace detail

/// Per-model wrapper: network plus the config needed to use it.
template <typename T>
struct TextCnn {
  TextCnnConfig config;
  Network<T> net;
  std::size_t penultimate_end() const { return net.layers.size() - 2; }
};

template <typename T>
TextCnn<T> build_text_cnn(const TextCnnConfig& config, std::uint64_t seed) {
  if (config.vocab_size < 1) throw std::invalid_argument("text cnn: vocab_size must be positive");
  if (config.max_seq_len < config.kernel)
    throw std::invalid_argument("text cnn: max_seq_len must be >= kernel");
  TextCnn<T> m;
  m.config = config;
  std::size_t n_ids = static_cast<std::size_t>(config.vocab_size) + 2;  // pad 0, oov 1
  auto* emb = detail::add_layer(m.net, std::make_unique<Embedding<T>>(
                                           n_ids, static_cast<std::size_t>(config.embed_dim)));
  auto* conv = detail::add_layer(
      m.net, std::make_unique<Conv1d<T>>(static_cast<std::size_t>(config.filters),
                                         static_cast<std::size_t>(config.kernel),
                                         static_cast<std::size_t>(config.embed_dim)));
  detail::add_layer(m.net, std::make_unique<ReLU<T>>());
  detail::add_layer(m.net, std::make_unique<GlobalMaxPool1d<T>>());
  auto* fc1 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(static_cast<std::size_t>(config.filters),
                                        static_cast<std::size_t>(config.dense)));
  detail::add_layer(m.net, std::make_unique<ReLU<T>>());
  detail::add_layer(m.net, std::make_unique<Dropout<T>>(config.dropout));
  auto* fc2 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(static_cast<std::size_t>(config.dense), 1));
  Rng r0(derive_seed(seed, "init", 0));
  emb->init_params(r0);
  Rng r1(derive_seed(seed, "init", 1));
  conv->init_params(r1);
  Rng r2(derive_seed(seed, "init", 2));
  fc1->init_params(r2);
  Rng r3(derive_seed(seed, "init", 3));
  fc2->init_params(r3);
  return m;
}

template <typename T>
struct ImageCnn {
  ImageCnnConfig config;
  Network<T> net;
  std::size_t backbone_end = 0;  // index one past the flatten layer
  std::size_t penultimate_end() const { return net.layers.size() - 2; }
  std::size_t flatten_dim = 0;
};

template <typename T>
ImageCnn<T> build_image_cnn(const ImageCnnConfig& config, std::uint64_t seed) {
  if (config.channels.empty()) throw std::invalid_argument("image cnn: need conv blocks");
  ImageCnn<T> m;
  m.config = config;
  int side = imaging::kPageSide;
  int in_c = 1;
  int layer_seed = 0;
  for (int c : config.channels) {
    if (c < 1) throw std::invalid_argument("image cnn: channel counts must be positive");
    if (side % 2 != 0)
      throw std::invalid_argument("image cnn: too many blocks for 224 input (odd side)");
    auto* conv = detail::add_layer(
        m.net, std::make_unique<Conv2d<T>>(static_cast<std::size_t>(c),
                                           static_cast<std::size_t>(in_c), 3));
    Rng r(derive_seed(seed, "init", static_cast<std::uint64_t>(layer_seed++)));
    conv->init_params(r);
    conv->frozen = config.backbone_frozen;
    auto* relu = detail::add_layer(m.net, std::make_unique<ReLU<T>>());
    relu->frozen = config.backbone_frozen;
    auto* pool = detail::add_layer(m.net, std::make_unique<MaxPool2d<T>>());
    pool->frozen = config.backbone_frozen;
    side /= 2;
    in_c = c;
  }
  auto* flat = detail::add_layer(m.net, std::make_unique<Flatten<T>>());
  flat->frozen = config.backbone_frozen;
  m.backbone_end = m.net.layers.size();
  m.flatten_dim = static_cast<std::size_t>(in_c) * static_cast<std::size_t>(side) *
                  static_cast<std::size_t>(side);
  auto* fc1 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(m.flatten_dim, static_cast<std::size_t>(config.dense)));
  detail::add_layer(m.net, std::make_unique<ReLU<T>>());
  detail::add_layer(m.net, std::make_unique<Dropout<T>>(config.dropout));
  auto* fc2 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(static_cast<std::size_t>(config.dense), 1));
  Rng rh1(derive_seed(seed, "init", static_cast<std::uint64_t>(layer_seed++)));
  fc1->init_params(rh1);
  Rng rh2(derive_seed(seed, "init", static_cast<std::uint64_t>(layer_seed++)));
  fc2->init_params(rh2);
  return m;
}

template <typename T>
struct FusionMlp {
  FusionMlpConfig config;
  Network<T> net;
  std::size_t penultimate_end() const { return net.layers.size() - 2; }
};

template <typename T>
FusionMlp<T> build_fusion_mlp(const FusionMlpConfig& config, std::uint64_t seed) {
  if (config.input_dim < 1) throw std::invalid_argument("fusion mlp: input_dim must be positive");
  FusionMlp<T> m;
  m.config = config;
  auto* fc1 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(static_cast<std::size_t>(config.input_dim),
                                        static_cast<std::size_t>(config.hidden), config.l2));
  detail::add_layer(m.net, std::make_unique<ReLU<T>>());
  detail::add_layer(m.net, std::make_unique<Dropout<T>>(config.dropout));
  auto* fc2 = detail::add_layer(
      m.net, std::make_unique<Dense<T>>(static_cast<std::size_t>(config.hidden), 1));
  Rng r0(derive_seed(seed, "init", 0));
  fc1->init_params(r0);
  Rng r1(derive_seed(seed, "init", 1));
  fc2->init_params(r1);
  return m;
}

// --- batch assembly helpers ---------------------------------------------------

/// (B, max_seq_len) id tensor from already-encoded sequences (pad id 0).
template <typename T>
Tensor<T> gather_sequences(const std::vector<std::vector<int>>& seqs,
                           const std::vector<std::size_t>& idx, int max_seq_len) {
  Tensor<T> out({idx.size(), static_cast<std::size_t>(max_seq_len)});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = seqs[idx[b]];
    std::size_t n = std::min(s.size(), static_cast<std::size_t>(max_seq_len));
    for (std::size_t l = 0; l < n; ++l) out(b, l) = static_cast<T>(s[l]);
  }
  return out;
}

/// (B, 1, 224, 224) float tensor from binarized pages (ink = 1).
template <typename T>
Tensor<T> gather_images(const std::vector<const imaging::Binary224*>& pages,
                        const std::vector<std::size_t>& idx) {
  const std::size_t side = imaging::kPageSide;
  Tensor<T> out({idx.size(), 1, side, side});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& px = pages[idx[b]]->pixels;
    for (std::size_t i = 0; i < px.size(); ++i)
      out.data[b * px.size() + i] = static_cast<T>(px[i]);
  }
  return out;
}

/// (B, D) tensor from dense row vectors.
template <typename T>
Tensor<T> gather_rows(const std::vector<std::vector<T>>& rows,
                      const std::vector<std::size_t>& idx) {
  if (rows.empty()) throw std::invalid_argument("gather_rows: empty dataset");
  std::size_t D = rows[0].size();
  Tensor<T> out({idx.size(), D});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& r = rows[idx[b]];
    if (r.size() != D) throw std::invalid_argument("gather_rows: ragged rows");
    std::copy(r.begin(), r.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * D));
  }
  return out;
}

// --- high-level training ------------------------------------------------------

template <typename T>
TrainHistory train_text_cnn(TextCnn<T>& model, const std::vector<std::vector<int>>& sequences,
                            const std::vector<double>& labels, TrainOptions options) {
  options.batch = model.config.batch;
  RmsProp<T> opt(model.config.lr);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    return gather_sequences<T>(sequences, idx, model.config.max_seq_len);
  };
  return train_binary(model.net, 0, model.net.layers.size(), sequences.size(), gather, labels,
                      opt, options);
}

/// Runs the frozen backbone once per page and returns the cached flatten
/// outputs; training then touches only the head layers.
template <typename T>
std::vector<std::vector<T>> image_backbone_features(ImageCnn<T>& model,
                                                    const std::vector<const imaging::Binary224*>& pages,
                                                    int batch) {
  std::vector<std::vector<T>> feats;
  feats.reserve(pages.size());
  std::size_t bs = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t start = 0; start < pages.size(); start += bs) {
    std::size_t end = std::min(pages.size(), start + bs);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor<T> out = model.net.forward_range(0, model.backbone_end,
                                            gather_images<T>(pages, idx), false, nullptr);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::vector<T> row(model.flatten_dim);
      for (std::size_t j = 0; j < model.flatten_dim; ++j) row[j] = out(b, j);
      feats.push_back(std::move(row));
    }
  }
  return feats;
}

template <typename T>
TrainHistory train_image_cnn(ImageCnn<T>& model,
                             const std::vector<const imaging::Binary224*>& pages,
                             const std::vector<double>& labels, TrainOptions options) {
  options.batch = model.config.batch;
  Adam<T> opt(model.config.lr);
  if (model.config.backbone_frozen) {
    auto feats = image_backbone_features(model, pages, model.config.batch);
    auto gather = [&](const std::vector<std::size_t>& idx) { return gather_rows<T>(feats, idx); };
    return train_binary(model.net, model.backbone_end, model.net.layers.size(), pages.size(),
                        gather, labels, opt, options);
  }
  auto gather = [&](const std::vector<std::size_t>& idx) { return gather_images<T>(pages, idx); };
  return train_binary(model.net, 0, model.net.layers.size(), pages.size(), gather, labels, opt,
                      options);
}

template <typename T>
TrainHistory train_fusion_mlp(FusionMlp<T>& model, const std::vector<std::vector<T>>& vectors,
                              const std::vector<double>& labels, TrainOptions options) {
  options.batch = model.config.batch;
  Adam<T> opt(model.config.lr);
  auto gather = [&](const std::vector<std::size_t>& idx) { return gather_rows<T>(vectors, idx); };
  return train_binary(model.net, 0, model.net.layers.size(), vectors.size(), gather, labels, opt,
                      options);
}

// --- penultimate extraction ---------------------------------------------------

/// Activations of the last hidden dense layer (post-ReLU, dropout off), one
/// row per batch example.
template <typename T>
Tensor<T> extract_penultimate(Network<T>& net, std::size_t penultimate_end, const Tensor<T>& in) {
  return net.forward_range(0, penultimate_end, in, false, nullptr);
}

// --- serialization ------------------------------------------------------------

inline constexpr char kNeuralMagic[9] = "PSSNN01\0";

namespace detail {

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const std::string& type, const std::vector<double>& cfg) {
  auto dim = [&cfg](std::size_t i) { return static_cast<std::size_t>(cfg.at(i)); };
  if (type == "embedding") return std::make_unique<Embedding<T>>(dim(0), dim(1));
  if (type == "conv1d") return std::make_unique<Conv1d<T>>(dim(0), dim(1), dim(2));
  if (type == "conv2d") return std::make_unique<Conv2d<T>>(dim(0), dim(1), dim(2));
  if (type == "relu") return std::make_unique<ReLU<T>>();
  if (type == "global_max_pool1d") return std::make_unique<GlobalMaxPool1d<T>>();
  if (type == "max_pool2d") return std::make_unique<MaxPool2d<T>>();
  if (type == "flatten") return std::make_unique<Flatten<T>>();
  if (type == "dense") return std::make_unique<Dense<T>>(dim(0), dim(1), cfg.at(2));
  if (type == "dropout") return std::make_unique<Dropout<T>>(cfg.at(0));
  throw std::runtime_error("unknown layer type in model file: " + type);
}

template <typename T>
void write_network(io::BinaryWriter& w, Network<T>& net) {
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (auto& layer : net.layers) {
    w.str(layer->type());
    w.u8(layer->frozen ? 1 : 0);
    auto cfg = layer->config();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    for (double c : cfg) w.f64(c);
    auto params = layer->params();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (Tensor<T>* p : params) {
      w.u8(static_cast<std::uint8_t>(p->rank()));
      for (std::size_t d : p->shape) w.u64(d);
      w.u8(static_cast<std::uint8_t>(sizeof(T)));
      for (const T& v : p->data) {
        if constexpr (sizeof(T) == 4)
          w.f32(static_cast<float>(v));
        else
          w.f64(static_cast<double>(v));
      }
    }
  }
}

template <typename T>
Network<T> read_network(io::BinaryReader& r) {
  Network<T> net;
  std::uint32_t n_layers = r.u32();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    std::string type = r.str();
    bool frozen = r.u8() != 0;
    std::uint32_t n_cfg = r.u32();
    std::vector<double> cfg(n_cfg);
    for (auto& c : cfg) c = r.f64();
    auto layer = make_layer<T>(type, cfg);
    layer->frozen = frozen;
    std::uint32_t n_params = r.u32();
    auto params = layer->params();
    if (params.size() != n_params)
      throw std::runtime_error("model file: parameter count mismatch for layer " + type);
    for (Tensor<T>* p : params) {
      std::uint8_t rank = r.u8();
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
      if (shape != p->shape)
        throw std::runtime_error("model file: tensor shape mismatch for layer " + type);
      std::uint8_t dtype = r.u8();
      if (dtype != sizeof(T))
        throw std::runtime_error("model file: dtype width " + std::to_string(dtype) +
                                 " does not match this build");
      for (T& v : p->data) {
        if constexpr (sizeof(T) == 4)
          v = static_cast<T>(r.f32());
        else
          v = static_cast<T>(r.f64());
      }
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline void write_config_map(io::BinaryWriter& w,
                             const std::vector<std::pair<std::string, double>>& kv) {
  w.u32(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    w.str(k);
    w.f64(v);
  }
}

inline std::vector<std::pair<std::string, double>> read_config_map(io::BinaryReader& r) {
  std::uint32_t n = r.u32();
  std::vector<std::pair<std::string, double>> kv(n);
  for (auto& [k, v] : kv) {
    k = r.str();
    v = r.f64();
  }
  return kv;
}

inline double config_value(const std::vector<std::pair<std::string, double>>& kv,
                           const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  throw std::runtime_error("model file: missing config key " + key);
}

}  // namespace detail

template <typename T>
void save_text_cnn(const TextCnn<T>& model, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kNeuralMagic);
  w.str("text_cnn");
  detail::write_config_map(
      w, {{"vocab_size", static_cast<double>(model.config.vocab_size)},
          {"embed_dim", static_cast<double>(model.config.embed_dim)},
          {"filters", static_cast<double>(model.config.filters)},
          {"kernel", static_cast<double>(model.config.kernel)},
          {"dense", static_cast<double>(model.config.dense)},
          {"dropout", model.config.dropout},
          {"max_seq_len", static_cast<double>(model.config.max_seq_len)},
          {"lr", model.config.lr},
          {"batch", static_cast<double>(model.config.batch)}});
  detail::write_network(w, const_cast<Network<T>&>(model.net));
  w.close();
}

template <typename T>
TextCnn<T> load_text_cnn(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kNeuralMagic);
  std::string kind = r.str();
  if (kind != "text_cnn")
    throw std::runtime_error("expected a text_cnn model file, found " + kind);
  auto kv = detail::read_config_map(r);
  TextCnn<T> m;
  m.config.vocab_size = static_cast<int>(detail::config_value(kv, "vocab_size"));
  m.config.embed_dim = static_cast<int>(detail::config_value(kv, "embed_dim"));
  m.config.filters = static_cast<int>(detail::config_value(kv, "filters"));
  m.config.kernel = static_cast<int>(detail::config_value(kv, "kernel"));
  m.config.dense = static_cast<int>(detail::config_value(kv, "dense"));
  m.config.dropout = detail::config_value(kv, "dropout");
  m.config.max_seq_len = static_cast<int>(detail::config_value(kv, "max_seq_len"));
  m.config.lr = detail::config_value(kv, "lr");
  m.config.batch = static_cast<int>(detail::config_value(kv, "batch"));
  m.net = detail::read_network<T>(r);
  return m;
}

template <typename T>
void save_image_cnn(const ImageCnn<T>& model, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kNeuralMagic);
  w.str("image_cnn");
  std::vector<std::pair<std::string, double>> kv = {
      {"n_blocks", static_cast<double>(model.config.channels.size())},
      {"dense", static_cast<double>(model.config.dense)},
      {"dropout", model.config.dropout},
      {"lr", model.config.lr},
      {"batch", static_cast<double>(model.config.batch)},
      {"backbone_frozen", model.config.backbone_frozen ? 1.0 : 0.0}};
  for (std::size_t i = 0; i < model.config.channels.size(); ++i)
    kv.emplace_back("channels" + std::to_string(i), static_cast<double>(model.config.channels[i]));
  detail::write_config_map(w, kv);
  detail::write_network(w, const_cast<Network<T>&>(model.net));
  w.close();
}

template <typename T>
ImageCnn<T> load_image_cnn(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kNeuralMagic);
  std::string kind = r.str();
  if (kind != "image_cnn")
    throw std::runtime_error("expected an image_cnn model file, found " + kind);
  auto kv = detail::read_config_map(r);
  ImageCnnConfig config;
  int n_blocks = static_cast<int>(detail::config_value(kv, "n_blocks"));
  config.channels.clear();
  for (int i = 0; i < n_blocks; ++i)
    config.channels.push_back(
        static_cast<int>(detail::config_value(kv, "channels" + std::to_string(i))));
  config.dense = static_cast<int>(detail::config_value(kv, "dense"));
  config.dropout = detail::config_value(kv, "dropout");
  config.lr = detail::config_value(kv, "lr");
  config.batch = static_cast<int>(detail::config_value(kv, "batch"));
  config.backbone_frozen = detail::config_value(kv, "backbone_frozen") != 0.0;
  ImageCnn<T> m;
  m.config = config;
  m.net = detail::read_network<T>(r);
  m.backbone_end = 3 * config.channels.size() + 1;
  int side = imaging::kPageSide >> config.channels.size();
  m.flatten_dim = static_cast<std::size_t>(config.channels.back()) *
                  static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  return m;
}

template <typename T>
void save_fusion_mlp(const FusionMlp<T>& model, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kNeuralMagic);
  w.str("fusion_mlp");
  detail::write_config_map(w, {{"input_dim", static_cast<double>(model.config.input_dim)},
                               {"hidden", static_cast<double>(model.config.hidden)},
                               {"l2", model.config.l2},
                               {"dropout", model.config.dropout},
                               {"lr", model.config.lr},
                               {"batch", static_cast<double>(model.config.batch)}});
  detail::write_network(w, const_cast<Network<T>&>(model.net));
  w.close();
}

template <typename T>
FusionMlp<T> load_fusion_mlp(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kNeuralMagic);
  std::string kind = r.str();
  if (kind != "fusion_mlp")
    throw std::runtime_error("expected a fusion_mlp model file, found " + kind);
  auto kv = detail::read_config_map(r);
  FusionMlp<T> m;
  m.config.input_dim = static_cast<int>(detail::config_value(kv, "input_dim"));
  m.config.hidden = static_cast<int>(detail::config_value(kv, "hidden"));
  m.config.l2 = detail::config_value(kv, "l2");
  m.config.dropout = detail::config_value(kv, "dropout");
  m.config.lr = detail::config_value(kv, "lr");
  m.config.batch = static_cast<int>(detail::config_value(kv, "batch"));
  m.net = detail::read_network<T>(r);
  return m;
}

/// Copies backbone parameters (all layers up to and including flatten) from a
/// saved image CNN into a freshly built model, so externally trained backbones
/// can be swapped in.
template <typename T>
void load_backbone_weights(ImageCnn<T>& model, const std::filesystem::path& path) {
  ImageCnn<T> donor = load_image_cnn<T>(path);
  if (donor.backbone_end != model.backbone_end)
    throw std::runtime_error("backbone layout mismatch between model and " + path.string());
  for (std::size_t i = 0; i < model.backbone_end; ++i) {
    auto dst = model.net.layers[i]->params();
    auto src = donor.net.layers[i]->params();
    if (dst.size() != src.size())
      throw std::runtime_error("backbone parameter mismatch at layer " + std::to_string(i));
    for (std::size_t p = 0; p < dst.size(); ++p) {
      if (dst[p]->shape != src[p]->shape)
        throw std::runtime_error("backbone tensor shape mismatch at layer " + std::to_string(i));
      dst[p]->data = src[p]->data;
    }
  }
}

}  // namespace pss::neural
