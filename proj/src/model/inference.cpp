#include "fairgrpo/model/inference.hpp"

#include <algorithm>
#include <cmath>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/kernels/kernels.hpp"

namespace fairgrpo::model {

struct MergedWeights {
  struct Layer {
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<double> w[4], b[4];
    std::vector<double> w_in, b_in, w_out, b_out;
  };
  ModelConfig config;
  std::vector<double> tok_emb, pos_emb, lnf_g, lnf_b, head;
  std::vector<Layer> layers;
};

namespace {

std::vector<double> copy_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::shared_ptr<const MergedWeights> merge(const Transformer& model) {
  if (!model.config().causal || !model.config().lm_head) {
    throw ContractError("inference: needs a causal model with an LM head");
  }
  auto m = std::make_shared<MergedWeights>();
  m->config = model.config();
  m->tok_emb = copy_of(model.token_embedding());
  m->pos_emb = copy_of(model.position_embedding());
  m->lnf_g = copy_of(model.final_gamma());
  m->lnf_b = copy_of(model.final_beta());
  m->head = copy_of(model.head());
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& src = model.layers()[l];
    MergedWeights::Layer L;
    L.ln1_g = copy_of(src.ln1_gamma);
    L.ln1_b = copy_of(src.ln1_beta);
    L.ln2_g = copy_of(src.ln2_gamma);
    L.ln2_b = copy_of(src.ln2_beta);
    for (std::size_t p = 0; p < 4; ++p) {
      L.w[p] = model.has_lora() ? copy_of(lora_merge_view(src.w[p], model.adapter(l, static_cast<Projection>(p))))
                                : copy_of(src.w[p]);
      L.b[p] = copy_of(src.b[p]);
    }
    L.w_in = copy_of(src.w_in);
    L.b_in = copy_of(src.b_in);
    L.w_out = copy_of(src.w_out);
    L.b_out = copy_of(src.b_out);
    m->layers.push_back(std::move(L));
  }
  return m;
}

void layer_norm(const double* x, const std::vector<double>& g, const std::vector<double>& b, double* out,
                std::size_t n) {
  double mu = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += x[i];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
  var /= static_cast<double>(n);
  const double is = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mu) * is * g[i] + b[i];
}

// out[n] = W[n,k] x[k] + bias[n]
void linear(const std::vector<double>& w, const std::vector<double>& bias, const double* x, double* out,
            std::size_t n, std::size_t k) {
  kernels::gemm_nt(x, w.data(), out, 1, n, k);
  for (std::size_t i = 0; i < n; ++i) out[i] += bias[i];
}

double gelu(double x) {
  constexpr double c = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

}  // namespace

InferenceSession::InferenceSession(const Transformer& model) : weights_(merge(model)) {
  const auto& c = weights_->config;
  keys_.assign(c.n_layers, std::vector<double>(c.max_position * c.d_model, 0.0));
  values_.assign(c.n_layers, std::vector<double>(c.max_position * c.d_model, 0.0));
  logits_.assign(c.vocab_size, 0.0);
}

std::size_t InferenceSession::vocab_size() const { return weights_->config.vocab_size; }

std::span<const double> InferenceSession::push(std::int32_t token) {
  const auto& W = *weights_;
  const auto& c = W.config;
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
    throw ContractError("inference: token id " + std::to_string(token) + " outside vocabulary");
  }
  if (length_ >= c.max_position) {
    throw ContractError("inference: sequence would exceed max_position " + std::to_string(c.max_position));
  }
  const std::size_t d = c.d_model, H = c.n_heads, hd = d / H, pos = length_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(d), h(d), q(d), att(d), tmp(d), f(c.d_ff), scores(pos + 1);
  for (std::size_t i = 0; i < d; ++i) {
    x[i] = W.tok_emb[static_cast<std::size_t>(token) * d + i] + W.pos_emb[pos * d + i];
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = W.layers[l];
    layer_norm(x.data(), L.ln1_g, L.ln1_b, h.data(), d);
    linear(L.w[0], L.b[0], h.data(), q.data(), d, d);
    double* kc = keys_[l].data();
    double* vc = values_[l].data();
    linear(L.w[1], L.b[1], h.data(), kc + pos * d, d, d);
    linear(L.w[2], L.b[2], h.data(), vc + pos * d, d, d);
    std::fill(att.begin(), att.end(), 0.0);
    for (std::size_t hh = 0; hh < H; ++hh) {
      const double* qh = q.data() + hh * hd;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= pos; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += qh[e] * kc[j * d + hh * hd + e];
        scores[j] = s * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        const double p = scores[j] / z;
        for (std::size_t e = 0; e < hd; ++e) att[hh * hd + e] += p * vc[j * d + hh * hd + e];
      }
    }
    linear(L.w[3], L.b[3], att.data(), tmp.data(), d, d);
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i];
    layer_norm(x.data(), L.ln2_g, L.ln2_b, h.data(), d);
    linear(L.w_in, L.b_in, h.data(), f.data(), c.d_ff, d);
    for (double& v : f) v = gelu(v);
    linear(L.w_out, L.b_out, f.data(), tmp.data(), d, c.d_ff);
    for (std::size_t i = 0; i < d; ++i) x[i] += tmp[i];
  }
  layer_norm(x.data(), W.lnf_g, W.lnf_b, h.data(), d);
  kernels::gemm_nt(h.data(), W.head.data(), logits_.data(), 1, c.vocab_size, d);
  ++length_;
  return logits_;
}

std::span<const double> InferenceSession::push_prompt(const text::TokenSequence& prompt) {
  push(text::kBos);
  for (std::int32_t id : prompt.real_ids()) push(id);
  return logits_;
}

}  // namespace fairgrpo::model
