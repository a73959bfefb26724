#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dllm/model.hpp"

namespace dllm {

struct ToyLayerWeights {
  std::vector<float> attn_norm;  // d
  std::vector<float> wq, wk, wv, wo;  // d x d, row-major [in][out]
  std::vector<float> ffn_norm;  // d
  std::vector<float> w_up;  // d x d_ff
  std::vector<float> w_down;  // d_ff x d
};

struct ToyWeights {
  std::vector<float> embedding;  // vocab x d
  std::vector<ToyLayerWeights> layers;
  std::vector<float> final_norm;  // d
  std::vector<float> output;  // d x vocab
};

// Tiny bidirectional pre-norm transformer with rotary position encoding
// driven by the layout's absolute position IDs. Weights are seeded normals
// scaled by 1/sqrt(d_model); norm gains start at 1.
//
// The [MASK] token is an input-only symbol: its output logit is pinned to a
// large negative value so it is never predicted.
class ToyModel final : public Model {
 public:
  static constexpr float kSuppressedLogit = -1.0e4F;

  explicit ToyModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    init_weights();
    const std::size_t hd = config_.head_dim();
    for (std::size_t i = 0; i + 1 < hd; i += 2)
      inv_freq_.push_back(std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(hd)));
  }

  [[nodiscard]] const ModelConfig& config() const override { return config_; }
  [[nodiscard]] const ToyWeights& weights() const { return weights_; }

  [[nodiscard]] ForwardResult forward(const ForwardInput& in) const override {
    check_forward_input(config_, in);
    const auto& layout = in.layout;
    const std::size_t n = layout.num_queries();
    const std::size_t d = config_.d_model;
    const std::size_t n_ctx = layout.num_context_keys();

    std::vector<float> x(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto tok = static_cast<std::size_t>(in.tokens[i]);
      std::copy_n(weights_.embedding.begin() + static_cast<std::ptrdiff_t>(tok * d), d, x.begin() + static_cast<std::ptrdiff_t>(i * d));
    }

    ForwardResult result{LogitsView(query_positions(layout), config_.vocab_size), KVBlock(config_.n_layers, n, d)};
    std::vector<float> xn(n * d), q(n * d), attn(n * d), proj(n * d), hidden(n * config_.d_ff);

    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const auto& w = weights_.layers[l];
      rms_norm(x, w.attn_norm, xn);
      matmul(xn, w.wq, n, d, d, q);
      for (std::size_t i = 0; i < n; ++i) {
        matmul_row(std::span<const float>(xn).subspan(i * d, d), w.wk, d, d, result.kv.key(l, i));
        matmul_row(std::span<const float>(xn).subspan(i * d, d), w.wv, d, d, result.kv.value(l, i));
        const Position pos = layout.queries()[i].position;
        rotate(std::span<float>(q).subspan(i * d, d), pos);
        rotate(result.kv.key(l, i), pos);
      }
      attend(in, l, q, result.kv, n_ctx, attn);
      matmul(attn, w.wo, n, d, d, proj);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += proj[j];

      rms_norm(x, w.ffn_norm, xn);
      matmul(xn, w.w_up, n, d, config_.d_ff, hidden);
      for (auto& h : hidden) h = gelu(h);
      matmul(hidden, w.w_down, n, config_.d_ff, d, proj);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += proj[j];
    }

    rms_norm(x, weights_.final_norm, xn);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = result.logits.row(i);
      matmul_row(std::span<const float>(xn).subspan(i * d, d), weights_.output, d, config_.vocab_size, row);
      row[static_cast<std::size_t>(config_.mask_token_id)] = kSuppressedLogit;
    }
    return result;
  }

 private:
  static std::vector<Position> query_positions(const AttentionLayout& layout) {
    std::vector<Position> out;
    out.reserve(layout.num_queries());
    for (const auto& qe : layout.queries()) out.push_back(qe.position);
    return out;
  }

  void init_weights() {
    const std::size_t d = config_.d_model;
    const std::size_t v = config_.vocab_size;
    const std::size_t f = config_.d_ff;
    std::mt19937_64 rng(config_.seed);
    std::normal_distribution<float> normal(0.0F, 1.0F);
    const float scale = 1.0F / std::sqrt(static_cast<float>(d));
    auto draw = [&](std::size_t count) {
      std::vector<float> out(count);
      for (auto& w : out) w = normal(rng) * scale;
      return out;
    };

    weights_.embedding = draw(v * d);
    weights_.layers.resize(config_.n_layers);
    for (auto& layer : weights_.layers) {
      layer.attn_norm.assign(d, 1.0F);
      layer.wq = draw(d * d);
      layer.wk = draw(d * d);
      layer.wv = draw(d * d);
      layer.wo = draw(d * d);
      layer.ffn_norm.assign(d, 1.0F);
      layer.w_up = draw(d * f);
      layer.w_down = draw(f * d);
    }
    weights_.final_norm.assign(d, 1.0F);
    weights_.output = draw(d * v);
  }

  void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out) const {
    const std::size_t d = config_.d_model;
    for (std::size_t i = 0; i < x.size() / d; ++i) {
      float ss = 0.0F;
      for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
      const float inv = 1.0F / std::sqrt(ss / static_cast<float>(d) + 1.0e-5F);
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * inv * gain[j];
    }
  }

  static void matmul_row(std::span<const float> x, std::span<const float> w, std::size_t in, std::size_t out,
                         std::span<float> y) {
    float* __restrict yp = y.data();
    std::fill(yp, yp + out, 0.0F);
    for (std::size_t i = 0; i < in; ++i) {
      const float xi = x[i];
      const float* __restrict wr = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yp[o] += xi * wr[o];
    }
  }

  static void matmul(std::span<const float> x, std::span<const float> w, std::size_t rows, std::size_t in,
                     std::size_t out, std::span<float> y) {
    for (std::size_t r = 0; r < rows; ++r) matmul_row(x.subspan(r * in, in), w, in, out, y.subspan(r * out, out));
  }

  static float gelu(float v) {
    constexpr float kC = 0.7978845608F;  // sqrt(2/pi)
    return 0.5F * v * (1.0F + std::tanh(kC * (v + 0.044715F * v * v * v)));
  }

  // Rotary encoding per head on consecutive pairs; an odd trailing lane is
  // left untouched.
  void rotate(std::span<float> vec, Position pos) const {
    const std::size_t hd = config_.head_dim();
    for (std::size_t p = 0; p < inv_freq_.size(); ++p) {
      const double angle = static_cast<double>(pos) * inv_freq_[p];
      const auto c = static_cast<float>(std::cos(angle));
      const auto s = static_cast<float>(std::sin(angle));
      for (std::size_t h = 0; h < config_.n_heads; ++h) {
        float* v = vec.data() + h * hd + 2 * p;
        const float a = v[0];
        const float b = v[1];
        v[0] = a * c - b * s;
        v[1] = a * s + b * c;
      }
    }
  }

  void attend(const ForwardInput& in, std::size_t layer, std::span<const float> q, const KVBlock& fresh,
              std::size_t n_ctx, std::span<float> out) const {
    const auto& layout = in.layout;
    const std::size_t n = layout.num_queries();
    const std::size_t n_keys = layout.num_keys();
    const std::size_t d = config_.d_model;
    const std::size_t hd = config_.head_dim();
    const float scale = 1.0F / std::sqrt(static_cast<float>(hd));

    std::vector<const float*> keys(n_keys);
    std::vector<const float*> values(n_keys);
    for (std::size_t k = 0; k < n_keys; ++k) {
      keys[k] = (k < n_ctx ? in.cache.key(layer, k) : fresh.key(layer, k - n_ctx)).data();
      values[k] = (k < n_ctx ? in.cache.value(layer, k) : fresh.value(layer, k - n_ctx)).data();
    }
    std::vector<std::size_t> visible;
    std::vector<float> scores;
    visible.reserve(n_keys);
    scores.reserve(n_keys);

    for (std::size_t i = 0; i < n; ++i) {
      visible.clear();
      for (std::size_t k = 0; k < n_keys; ++k) {
        if (layout.allows(i, k)) visible.push_back(k);
      }
      if (visible.empty()) throw InvariantError("query row sees no keys");
      for (std::size_t h = 0; h < config_.n_heads; ++h) {
        const float* qh = q.data() + i * d + h * hd;
        scores.assign(visible.size(), 0.0F);
        float peak = -INFINITY;
        for (std::size_t j = 0; j < visible.size(); ++j) {
          const float* kh = keys[visible[j]] + h * hd;
          float dot = 0.0F;
          for (std::size_t e = 0; e < hd; ++e) dot += qh[e] * kh[e];
          scores[j] = dot * scale;
          peak = std::max(peak, scores[j]);
        }
        float sum = 0.0F;
        for (auto& s : scores) {
          s = std::exp(s - peak);
          sum += s;
        }
        float* oh = out.data() + i * d + h * hd;
        std::fill(oh, oh + hd, 0.0F);
        for (std::size_t j = 0; j < visible.size(); ++j) {
          const float p = scores[j] / sum;
          const float* vh = values[visible[j]] + h * hd;
          for (std::size_t e = 0; e < hd; ++e) oh[e] += p * vh[e];
        }
      }
    }
  }

  ModelConfig config_;
  ToyWeights weights_;
  std::vector<double> inv_freq_;  // rotary frequency per lane pair
};

}  // namespace dllm
