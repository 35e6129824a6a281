// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skyrank/common.hpp"
#include "skyrank/embedding.hpp"
#include "skyrank/parallel.hpp"
#include "skyrank/rng.hpp"

namespace skyrank {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Token matrix of shape (2*tokens_per_view + 2) x d:
// [query tokens | separator | candidate tokens | readout].
using PromptTokens = Eigen::MatrixXd;

inline constexpr double kLayerNormEps = 1e-5;

// Projection matrices that can carry a low-rank adapter.
enum class LoraSlot { Q = 0, K, V, O, MlpIn, MlpOut };
inline constexpr int kNumLoraSlots = 6;

inline const char* lora_slot_name(LoraSlot s) {
  switch (s) {
    case LoraSlot::Q: return "q";
    case LoraSlot::K: return "k";
    case LoraSlot::V: return "v";
    case LoraSlot::O: return "o";
    case LoraSlot::MlpIn: return "mlp_in";
    case LoraSlot::MlpOut: return "mlp_out";
  }
  return "?";
}

struct ScorerConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int tokens_per_view = 4;
  int lora_rank = 16;
  double lora_alpha = 32.0;
  double lora_dropout = 0.05;
  bool lora_scaling = true;
  double lora_a_init = 0.125;  // stddev of the A factors at init
  std::vector<std::string> lora_targets = {"q", "k", "v"};
  int input_dim = 32;
  std::uint64_t seed = 20240001;

  int n_tokens() const { return 2 * tokens_per_view + 2; }
  int mlp_hidden() const { return 4 * d; }
  double lora_scale() const {
    return lora_scaling ? lora_alpha / static_cast<double>(lora_rank) : 1.0;
  }

  // Expands target names into adapter slots; "mlp" adapts both MLP matrices.
  std::vector<LoraSlot> slots() const {
    std::vector<LoraSlot> out;
    auto add = [&](LoraSlot s) {
      for (LoraSlot t : out)
        if (t == s) return;
      out.push_back(s);
    };
    for (const std::string& t : lora_targets) {
      if (t == "q") add(LoraSlot::Q);
      else if (t == "k") add(LoraSlot::K);
      else if (t == "v") add(LoraSlot::V);
      else if (t == "o") add(LoraSlot::O);
      else if (t == "mlp") { add(LoraSlot::MlpIn); add(LoraSlot::MlpOut); }
      else throw ValidationError("unknown lora target: \"" + t + "\"");
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void validate() const {
    if (d <= 0) throw ValidationError("scorer: d must be positive");
    if (n_layers <= 0) throw ValidationError("scorer: n_layers must be positive");
    if (n_heads <= 0 || d % n_heads != 0) {
      throw ValidationError("scorer: n_heads must divide d");
    }
    if (tokens_per_view < 1) throw ValidationError("scorer: tokens_per_view must be >= 1");
    if (lora_rank < 1 || lora_rank >= d) {
      throw ValidationError("scorer: lora_rank must satisfy 1 <= r < d");
    }
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) {
      throw ValidationError("scorer: lora_dropout must be in [0, 1)");
    }
    if (!(lora_a_init > 0.0)) {
      throw ValidationError("scorer: lora_a_init must be positive");
    }
    if (input_dim <= 0) throw ValidationError("scorer: input_dim must be positive");
    slots();  // rejects unknown target names
  }
};

inline void to_json(nlohmann::ordered_json& j, const ScorerConfig& c) {
  j = nlohmann::ordered_json{{"d", c.d},
                             {"n_layers", c.n_layers},
                             {"n_heads", c.n_heads},
                             {"tokens_per_view", c.tokens_per_view},
                             {"lora_rank", c.lora_rank},
                             {"lora_alpha", c.lora_alpha},
                             {"lora_dropout", c.lora_dropout},
                             {"lora_scaling", c.lora_scaling},
                             {"lora_a_init", c.lora_a_init},
                             {"lora_targets", c.lora_targets},
                             {"input_dim", c.input_dim},
                             {"seed", c.seed}};
}

template <class Json>
void scorer_config_from_json(const Json& j, ScorerConfig& c) {
  c.d = j.value("d", c.d);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.tokens_per_view = j.value("tokens_per_view", c.tokens_per_view);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.lora_dropout = j.value("lora_dropout", c.lora_dropout);
  c.lora_scaling = j.value("lora_scaling", c.lora_scaling);
  c.lora_a_init = j.value("lora_a_init", c.lora_a_init);
  if (j.contains("lora_targets"))
    c.lora_targets = j.at("lora_targets").template get<std::vector<std::string>>();
  c.input_dim = j.value("input_dim", c.input_dim);
  c.seed = j.value("seed", c.seed);
}

inline void from_json(const nlohmann::json& j, ScorerConfig& c) {
  scorer_config_from_json(j, c);
}
inline void from_json(const nlohmann::ordered_json& j, ScorerConfig& c) {
  scorer_config_from_json(j, c);
}

// Trainable low-rank factors: delta = scale * A * B, rank <= r.
struct LoraPair {
  Mat A;  // in x r
  Mat B;  // r x out
};

struct LayerParams {
  Mat w_q, w_k, w_v, w_o;          // d x d, frozen
  Mat mlp_w1;                      // d x 4d, frozen
  Vec mlp_b1;                      // 4d, frozen
  Mat mlp_w2;                      // 4d x d, frozen
  Vec mlp_b2;                      // d, frozen
  Vec ln1_scale, ln1_shift;        // d, frozen
  Vec ln2_scale, ln2_shift;        // d, frozen
  std::vector<std::pair<LoraSlot, LoraPair>> lora;  // canonical slot order

  const LoraPair* find_lora(LoraSlot s) const {
    for (const auto& [slot, pair] : lora)
      if (slot == s) return &pair;
    return nullptr;
  }
  LoraPair* find_lora(LoraSlot s) {
    for (auto& [slot, pair] : lora)
      if (slot == s) return &pair;
    return nullptr;
  }
};

// Frozen backbone plus the trainable set {A_l, B_l, value_head}.
struct ScorerParams {
  ScorerConfig config;
  Mat input_proj;   // input_dim x (tokens_per_view * d), frozen
  Mat pos_embed;    // n_tokens x d, frozen
  Vec separator;    // d, frozen
  Vec readout;      // d, frozen
  std::vector<LayerParams> layers;
  Vec value_head;   // d, trainable, zero-initialized
};

namespace detail {

inline Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline Vec gaussian_vector(Eigen::Index n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

inline Eigen::Index lora_in_dim(const ScorerConfig& cfg, LoraSlot s) {
  return s == LoraSlot::MlpOut ? cfg.mlp_hidden() : cfg.d;
}
inline Eigen::Index lora_out_dim(const ScorerConfig& cfg, LoraSlot s) {
  return s == LoraSlot::MlpIn ? cfg.mlp_hidden() : cfg.d;
}

}  // namespace detail

// Deterministic parameters from the config seed. B = 0 everywhere so the
// adapted model starts exactly at the base model; the value head starts at
// zero so untrained scores are identically 0.
inline ScorerParams init_params(const ScorerConfig& config) {
  config.validate();
  ScorerParams p;
  p.config = config;
  const int d = config.d;
  const double base_sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double a_sd = config.lora_a_init;

  auto rng_for = [&](const std::string& name) {
    return make_rng(config.seed, fnv1a64(name));
  };

  {
    Rng rng = rng_for("input_proj");
    p.input_proj = detail::gaussian_matrix(config.input_dim,
                                           config.tokens_per_view * d, 1.0, rng);
  }
  {
    Rng rng = rng_for("pos_embed");
    p.pos_embed = detail::gaussian_matrix(config.n_tokens(), d, 0.5, rng);
  }
  {
    Rng rng = rng_for("separator");
    p.separator = detail::gaussian_vector(d, 1.0, rng);
  }
  {
    Rng rng = rng_for("readout");
    p.readout = detail::gaussian_vector(d, 1.0, rng);
  }

  const std::vector<LoraSlot> slots = config.slots();
  p.layers.resize(config.n_layers);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    auto mat = [&](const char* name, Eigen::Index r, Eigen::Index c, double sd) {
      Rng rng = rng_for(prefix + name);
      return detail::gaussian_matrix(r, c, sd, rng);
    };
    layer.w_q = mat("w_q", d, d, base_sd);
    layer.w_k = mat("w_k", d, d, base_sd);
    layer.w_v = mat("w_v", d, d, base_sd);
    layer.w_o = mat("w_o", d, d, base_sd);
    layer.mlp_w1 = mat("mlp_w1", d, config.mlp_hidden(), base_sd);
    layer.mlp_b1 = Vec::Zero(config.mlp_hidden());
    layer.mlp_w2 = mat("mlp_w2", config.mlp_hidden(), d,
                       1.0 / std::sqrt(static_cast<double>(config.mlp_hidden())));
    layer.mlp_b2 = Vec::Zero(d);
    layer.ln1_scale = Vec::Ones(d);
    layer.ln1_shift = Vec::Zero(d);
    layer.ln2_scale = Vec::Ones(d);
    layer.ln2_shift = Vec::Zero(d);

    for (LoraSlot s : slots) {
      LoraPair pair;
      Rng rng = rng_for(prefix + "lora." + lora_slot_name(s) + ".A");
      pair.A = detail::gaussian_matrix(detail::lora_in_dim(config, s),
                                       config.lora_rank, a_sd, rng);
      pair.B = Mat::Zero(config.lora_rank, detail::lora_out_dim(config, s));
      layer.lora.emplace_back(s, std::move(pair));
    }
  }

  p.value_head = Vec::Zero(d);
  return p;
}

// W + (alpha/r) * A * B.
inline Mat effective_weight(const Mat& W, const Mat& A, const Mat& B,
                            double alpha, int r) {
  if (r < 1) throw ValidationError("effective_weight: rank must be positive");
  if (A.rows() != W.rows() || B.cols() != W.cols() || A.cols() != r ||
      B.rows() != r) {
    throw ValidationError("effective_weight: shape mismatch");
  }
  return W + (alpha / static_cast<double>(r)) * (A * B);
}

// Deterministic token assembly: project each view vector into
// tokens_per_view tokens, insert the separator between views, append the
// readout token, and add positional embeddings.
inline PromptTokens assemble_prompt(const std::vector<double>& query_vec,
                                    const std::vector<double>& candidate_vec,
                                    const ScorerParams& p) {
  const ScorerConfig& cfg = p.config;
  if (query_vec.size() != static_cast<std::size_t>(cfg.input_dim) ||
      candidate_vec.size() != static_cast<std::size_t>(cfg.input_dim)) {
    throw ValidationError("assemble_prompt: embedding dimension does not match input_dim");
  }
  const int d = cfg.d;
  const int tpv = cfg.tokens_per_view;
  PromptTokens tokens(cfg.n_tokens(), d);

  Eigen::Map<const Vec> q(query_vec.data(), cfg.input_dim);
  Eigen::Map<const Vec> c(candidate_vec.data(), cfg.input_dim);
  for (int i = 0; i < tpv; ++i) {
    tokens.row(i) = (q.transpose() * p.input_proj.middleCols(i * d, d));
    tokens.row(tpv + 1 + i) = (c.transpose() * p.input_proj.middleCols(i * d, d));
  }
  tokens.row(tpv) = p.separator.transpose();
  tokens.row(cfg.n_tokens() - 1) = p.readout.transpose();
  tokens += p.pos_embed;
  return tokens;
}

inline PromptTokens assemble_prompt(const Embedding& query,
                                    const Embedding& candidate,
                                    const ScorerParams& p) {
  return assemble_prompt(query.vec, candidate.vec, p);
}

struct LnCache {
  Mat xhat;    // normalized rows
  Vec inv_sd;  // per-row 1/sqrt(var + eps)
};

inline Mat layer_norm(const Mat& x, const Vec& scale, const Vec& shift,
                      LnCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Vec inv_sd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sd(i) = inv;
    xhat.row(i) = (x.row(i).array() - mu) * inv;
  }
  Mat out = xhat * scale.asDiagonal();
  out.rowwise() += shift.transpose();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sd = std::move(inv_sd);
  }
  return out;
}

inline Mat layer_norm_backward(const Mat& dy, const LnCache& cache,
                               const Vec& scale) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  Mat dxhat = dy * scale.asDiagonal();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.inv_sd(i) *
                (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

// Cached LoRA application; mask is empty unless dropout was active.
struct LoraCache {
  Mat t;     // drop(x) * A, n x r
  Mat mask;  // elementwise keep factors (0 or 1/(1-p)); empty = identity
};

struct LayerCache {
  LnCache ln1, ln2;
  Mat ln1_out, ln2_out;
  Mat q, k, v;                 // n x d
  std::vector<Mat> att_probs;  // per head, n x n rows summing to 1
  Mat att_concat;              // n x d
  Mat h_mid;                   // residual stream after attention
  Mat mlp_u, mlp_a;            // n x 4d
  std::array<LoraCache, kNumLoraSlots> lora;
  std::array<bool, kNumLoraSlots> lora_used{};
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Mat h_final;
  Vec h_last;
  double score = 0.0;
};

namespace detail {

// y = x*W + scale*(drop(x)*A)*B. The dropped input is recoverable from the
// cached mask, so backward never stores a second copy of x.
inline Mat apply_linear(const Mat& x, const Mat& W, const LoraPair* lora,
                        double scale, double dropout_p, Rng* dropout_rng,
                        LoraCache* cache) {
  Mat y = x * W;
  if (!lora) return y;
  Mat t;
  Mat mask;
  if (dropout_p > 0.0 && dropout_rng != nullptr) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    mask.resize(x.rows(), x.cols());
    const double keep = 1.0 / (1.0 - dropout_p);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        mask(i, j) = u(*dropout_rng) < dropout_p ? 0.0 : keep;
    t = x.cwiseProduct(mask) * lora->A;
  } else {
    t = x * lora->A;
  }
  y.noalias() += scale * (t * lora->B);
  if (cache) {
    cache->t = std::move(t);
    cache->mask = std::move(mask);
  }
  return y;
}

inline void check_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

}  // namespace detail

// Pre-norm transformer encoder forward for one prompt. Writes every
// intermediate needed by backward into `cache`; pass a dropout rng only
// during training.
inline double forward_cached(const ScorerParams& p, const PromptTokens& prompt,
                             ForwardCache& cache, Rng* dropout_rng = nullptr) {
  const ScorerConfig& cfg = p.config;
  if (prompt.rows() != cfg.n_tokens() || prompt.cols() != cfg.d) {
    throw ValidationError("forward: prompt shape does not match config");
  }
  detail::check_finite(prompt, "prompt tokens");

  const int n = cfg.n_tokens();
  const int d = cfg.d;
  const int dh = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lscale = cfg.lora_scale();
  const double pdrop = cfg.lora_dropout;

  cache.layers.assign(static_cast<std::size_t>(cfg.n_layers), LayerCache{});
  Mat h = prompt;

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& layer = p.layers[l];
    LayerCache& lc = cache.layers[l];

    auto adapted = [&](const Mat& x, const Mat& W, LoraSlot slot) {
      const LoraPair* lora = layer.find_lora(slot);
      LoraCache* lora_cache = nullptr;
      if (lora) {
        const int si = static_cast<int>(slot);
        lc.lora_used[si] = true;
        lora_cache = &lc.lora[si];
      }
      return detail::apply_linear(x, W, lora, lscale, pdrop, dropout_rng, lora_cache);
    };

    lc.ln1_out = layer_norm(h, layer.ln1_scale, layer.ln1_shift, &lc.ln1);
    lc.q = adapted(lc.ln1_out, layer.w_q, LoraSlot::Q);
    lc.k = adapted(lc.ln1_out, layer.w_k, LoraSlot::K);
    lc.v = adapted(lc.ln1_out, layer.w_v, LoraSlot::V);

    lc.att_probs.resize(cfg.n_heads);
    lc.att_concat.resize(n, d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      auto qh = lc.q.middleCols(head * dh, dh);
      auto kh = lc.k.middleCols(head * dh, dh);
      auto vh = lc.v.middleCols(head * dh, dh);
      Mat scores = att_scale * (qh * kh.transpose());
      Mat probs(n, n);
      for (int i = 0; i < n; ++i) {
        const double mx = scores.row(i).maxCoeff();
        Eigen::ArrayXd ex = (scores.row(i).array() - mx).exp();
        probs.row(i) = ex / ex.sum();
      }
      lc.att_concat.middleCols(head * dh, dh) = probs * vh;
      lc.att_probs[head] = std::move(probs);
    }

    Mat attn_out = adapted(lc.att_concat, layer.w_o, LoraSlot::O);
    lc.h_mid = h + attn_out;

    lc.ln2_out = layer_norm(lc.h_mid, layer.ln2_scale, layer.ln2_shift, &lc.ln2);
    lc.mlp_u = adapted(lc.ln2_out, layer.mlp_w1, LoraSlot::MlpIn);
    lc.mlp_u.rowwise() += layer.mlp_b1.transpose();
    lc.mlp_a = lc.mlp_u.unaryExpr([](double x) { return gelu(x); });
    Mat mlp_out = adapted(lc.mlp_a, layer.mlp_w2, LoraSlot::MlpOut);
    mlp_out.rowwise() += layer.mlp_b2.transpose();

    h = lc.h_mid + mlp_out;
    detail::check_finite(h, "hidden state after layer " + std::to_string(l));
  }

  cache.h_final = std::move(h);
  cache.h_last = cache.h_final.row(n - 1).transpose();
  cache.score = p.value_head.dot(cache.h_last);
  if (!std::isfinite(cache.score)) throw NumericError("non-finite score");
  return cache.score;
}

// Pure scoring function of (params, prompt); no state between calls.
inline double forward_score(const ScorerParams& p, const PromptTokens& prompt) {
  ForwardCache cache;
  return forward_cached(p, prompt, cache, nullptr);
}

// Batched scoring: an order-preserving pure map over the prompts. Parallel
// execution is bit-identical to serial because each slot is computed
// independently and written by index.
inline Vec forward_scores(const ScorerParams& p,
                          const std::vector<PromptTokens>& prompts,
                          int threads = 1) {
  Vec out(static_cast<Eigen::Index>(prompts.size()));
  const int n_threads = resolve_threads(threads);
  bool failed = false;
  std::string error;
#pragma omp parallel for schedule(static) num_threads(n_threads)
  for (long i = 0; i < static_cast<long>(prompts.size()); ++i) {
    try {
      out[i] = forward_score(p, prompts[static_cast<std::size_t>(i)]);
    } catch (const std::exception& e) {
#pragma omp critical
      {
        if (!failed) {
          failed = true;
          error = e.what();
        }
      }
    }
  }
  if (failed) throw NumericError(error);
  return out;
}

// Gradient buffers for the trainable set, mirroring the params layout.
struct GradBuffers {
  struct LayerGrads {
    std::vector<std::pair<LoraSlot, LoraPair>> lora;
  };
  std::vector<LayerGrads> layers;
  Vec value_head;

  static GradBuffers zeros_like(const ScorerParams& p) {
    GradBuffers g;
    g.layers.resize(p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      for (const auto& [slot, pair] : p.layers[l].lora) {
        LoraPair z;
        z.A = Mat::Zero(pair.A.rows(), pair.A.cols());
        z.B = Mat::Zero(pair.B.rows(), pair.B.cols());
        g.layers[l].lora.emplace_back(slot, std::move(z));
      }
    }
    g.value_head = Vec::Zero(p.value_head.size());
    return g;
  }

  void add_scaled(const GradBuffers& other, double s) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].lora.size(); ++i) {
        layers[l].lora[i].second.A += s * other.layers[l].lora[i].second.A;
        layers[l].lora[i].second.B += s * other.layers[l].lora[i].second.B;
      }
    }
    value_head += s * other.value_head;
  }
};

// Visits trainable tensors in canonical order (layer, slot, A then B, then
// value head) as flat (name, data, size) views. Params and grads share the
// same order by construction.
template <class Fn>
void visit_trainables(ScorerParams& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (auto& [slot, pair] : p.layers[l].lora) {
      const std::string base =
          "layer" + std::to_string(l) + ".lora." + lora_slot_name(slot);
      fn(base + ".A", pair.A.data(), static_cast<std::size_t>(pair.A.size()));
      fn(base + ".B", pair.B.data(), static_cast<std::size_t>(pair.B.size()));
    }
  }
  fn(std::string("value_head"), p.value_head.data(),
     static_cast<std::size_t>(p.value_head.size()));
}

template <class Fn>
void visit_gradients(GradBuffers& g, Fn&& fn) {
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    for (auto& [slot, pair] : g.layers[l].lora) {
      const std::string base =
          "layer" + std::to_string(l) + ".lora." + lora_slot_name(slot);
      fn(base + ".A", pair.A.data(), static_cast<std::size_t>(pair.A.size()));
      fn(base + ".B", pair.B.data(), static_cast<std::size_t>(pair.B.size()));
    }
  }
  fn(std::string("value_head"), g.value_head.data(),
     static_cast<std::size_t>(g.value_head.size()));
}

namespace detail {

// VJP of apply_linear. Returns dX; accumulates dA/dB when adapted.
inline Mat linear_backward(const Mat& x, const Mat& W, const LoraPair* lora,
                           const LoraCache* cache, double scale, const Mat& dy,
                           LoraPair* grads) {
  Mat dx = dy * W.transpose();
  if (!lora) return dx;
  Mat dt = scale * (dy * lora->B.transpose());  // n x r
  const bool dropped = cache->mask.size() > 0;
  if (dropped) {
    Mat x_eff = x.cwiseProduct(cache->mask);
    grads->A.noalias() += x_eff.transpose() * dt;
    dx.noalias() += (dt * lora->A.transpose()).cwiseProduct(cache->mask);
  } else {
    grads->A.noalias() += x.transpose() * dt;
    dx.noalias() += dt * lora->A.transpose();
  }
  grads->B.noalias() += scale * (cache->t.transpose() * dy);
  return dx;
}

}  // namespace detail

// Reverse-mode pass for one prompt given d(loss)/d(score). Accumulates into
// `grads`; frozen tensors receive nothing.
inline void backward_prompt(const ScorerParams& p, const ForwardCache& cache,
                            double dscore, GradBuffers& grads) {
  const ScorerConfig& cfg = p.config;
  const int n = cfg.n_tokens();
  const int d = cfg.d;
  const int dh = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lscale = cfg.lora_scale();

  grads.value_head += dscore * cache.h_last;

  Mat dh_stream = Mat::Zero(n, d);
  dh_stream.row(n - 1) = dscore * p.value_head.transpose();

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& layer = p.layers[l];
    const LayerCache& lc = cache.layers[l];

    auto back = [&](const Mat& x, const Mat& W, LoraSlot slot, const Mat& dy) {
      const LoraPair* lora = layer.find_lora(slot);
      LoraPair* g = nullptr;
      const LoraCache* c = nullptr;
      if (lora) {
        c = &lc.lora[static_cast<int>(slot)];
        for (auto& [s, pair] : grads.layers[l].lora)
          if (s == slot) g = &pair;
      }
      return detail::linear_backward(x, W, lora, c, lscale, dy, g);
    };

    // MLP branch: h_out = h_mid + (gelu(ln2_out*W1 + b1)*W2 + b2)
    Mat da = back(lc.mlp_a, layer.mlp_w2, LoraSlot::MlpOut, dh_stream);
    Mat du = da.cwiseProduct(lc.mlp_u.unaryExpr([](double x) { return gelu_grad(x); }));
    Mat dln2 = back(lc.ln2_out, layer.mlp_w1, LoraSlot::MlpIn, du);
    Mat dh_mid = dh_stream + layer_norm_backward(dln2, lc.ln2, layer.ln2_scale);

    // Attention branch: h_mid = h_in + (concat_heads(P_h * v_h) * W_o)
    Mat datt_concat = back(lc.att_concat, layer.w_o, LoraSlot::O, dh_mid);
    Mat dq(n, d), dk(n, d), dv(n, d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      auto qh = lc.q.middleCols(head * dh, dh);
      auto kh = lc.k.middleCols(head * dh, dh);
      auto vh = lc.v.middleCols(head * dh, dh);
      const Mat& probs = lc.att_probs[head];
      auto dout = datt_concat.middleCols(head * dh, dh);

      Mat dprobs = dout * vh.transpose();        // n x n
      dv.middleCols(head * dh, dh) = probs.transpose() * dout;

      Mat dscores(n, n);
      for (int i = 0; i < n; ++i) {
        const double dot = dprobs.row(i).dot(probs.row(i));
        dscores.row(i) =
            (probs.row(i).array() * (dprobs.row(i).array() - dot)).matrix();
      }
      dscores *= att_scale;
      dq.middleCols(head * dh, dh) = dscores * kh;
      dk.middleCols(head * dh, dh) = dscores.transpose() * qh;
    }

    Mat dln1 = back(lc.ln1_out, layer.w_q, LoraSlot::Q, dq);
    dln1 += back(lc.ln1_out, layer.w_k, LoraSlot::K, dk);
    dln1 += back(lc.ln1_out, layer.w_v, LoraSlot::V, dv);

    dh_stream = dh_mid + layer_norm_backward(dln1, lc.ln1, layer.ln1_scale);
  }
}

}  // namespace skyrank
