#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace fairmarket {

/// Fully connected network with tanh hidden layers and a linear output layer.
/// Parameters live in one flat array; per layer the row-major weight matrix
/// (out x in) is followed by the bias vector.
template <std::floating_point T>
class Mlp {
 public:
  /// Per-layer activations of one forward pass; acts[0] is the input.
  struct Cache {
    std::vector<std::vector<T>> acts;
  };

  Mlp() = default;

  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
      offsets_.push_back(n);
      n += static_cast<std::size_t>(sizes_[l + 1]) * (static_cast<std::size_t>(sizes_[l]) + 1);
    }
    params_.assign(n, T(0));
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return offsets_.size(); }
  std::size_t param_count() const { return params_.size(); }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  /// Orthogonal weights scaled by `hidden_gain` (hidden layers) or
  /// `output_gain` (last layer); zero biases.
  template <class Rng>
  void init_orthogonal(Rng& rng, T hidden_gain, T output_gain) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto in = static_cast<std::size_t>(sizes_[l]);
      const auto out = static_cast<std::size_t>(sizes_[l + 1]);
      // Orthonormalize along the shorter dimension.
      const bool rows = out <= in;
      const std::size_t count = rows ? out : in;
      const std::size_t len = rows ? in : out;
      std::vector<std::vector<double>> vecs(count, std::vector<double>(len));
      for (auto& v : vecs) {
        for (;;) {
          for (auto& x : v) x = normal(rng);
          for (const auto* prev = vecs.data(); prev != &v; ++prev) {
            double d = 0;
            for (std::size_t k = 0; k < len; ++k) d += v[k] * (*prev)[k];
            for (std::size_t k = 0; k < len; ++k) v[k] -= d * (*prev)[k];
          }
          double norm = 0;
          for (double x : v) norm += x * x;
          norm = std::sqrt(norm);
          if (norm > 1e-8) {
            for (auto& x : v) x /= norm;
            break;
          }
        }
      }
      const T gain = l + 1 == layer_count() ? output_gain : hidden_gain;
      T* w = params_.data() + offsets_[l];
      for (std::size_t r = 0; r < out; ++r)
        for (std::size_t c = 0; c < in; ++c) w[r * in + c] = gain * static_cast<T>(rows ? vecs[r][c] : vecs[c][r]);
      std::fill(w + out * in, w + out * in + out, T(0));
    }
  }

  std::vector<T> forward(std::span<const T> x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != input_size()) throw std::invalid_argument("Mlp: input size mismatch");
    std::vector<T> a(x.begin(), x.end());
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(a);
    }
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto in = static_cast<std::size_t>(sizes_[l]);
      const auto out = static_cast<std::size_t>(sizes_[l + 1]);
      const T* w = params_.data() + offsets_[l];
      const T* b = w + out * in;
      std::vector<T> z(out);
      for (std::size_t r = 0; r < out; ++r) {
        T s = b[r];
        const T* row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) s += row[c] * a[c];
        z[r] = l + 1 == layer_count() ? s : std::tanh(s);
      }
      a = std::move(z);
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  /// Accumulates dL/dparams into `grad` given dL/doutput for the pass in `cache`.
  void backward(const Cache& cache, std::span<const T> dout, std::span<T> grad) const {
    std::vector<T> dz(dout.begin(), dout.end());
    for (std::size_t l = layer_count(); l-- > 0;) {
      const auto in = static_cast<std::size_t>(sizes_[l]);
      const auto out = static_cast<std::size_t>(sizes_[l + 1]);
      const T* w = params_.data() + offsets_[l];
      T* gw = grad.data() + offsets_[l];
      T* gb = gw + out * in;
      const auto& a_in = cache.acts[l];
      for (std::size_t r = 0; r < out; ++r) {
        if (dz[r] == T(0)) continue;
        T* grow = gw + r * in;
        for (std::size_t c = 0; c < in; ++c) grow[c] += dz[r] * a_in[c];
        gb[r] += dz[r];
      }
      if (l == 0) break;
      std::vector<T> da(in, T(0));
      for (std::size_t r = 0; r < out; ++r) {
        if (dz[r] == T(0)) continue;
        const T* row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) da[c] += row[c] * dz[r];
      }
      for (std::size_t c = 0; c < in; ++c) da[c] *= T(1) - a_in[c] * a_in[c];
      dz = std::move(da);
    }
  }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<T> params_;
};

}  // namespace fairmarket
