// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "skyrank/training.hpp"

namespace skyrank {
namespace {

struct Segment {
  std::string name;
  double* data;
  std::size_t size;
};

std::vector<Segment> trainable_segments(ScorerParams& p) {
  std::vector<Segment> segs;
  visit_trainables(p, [&](const std::string& name, double* d, std::size_t n) {
    segs.push_back({name, d, n});
  });
  return segs;
}

std::vector<Segment> gradient_segments(GradBuffers& g) {
  std::vector<Segment> segs;
  visit_gradients(g, [&](const std::string& name, double* d, std::size_t n) {
    segs.push_back({name, d, n});
  });
  return segs;
}

void randomize_trainables(ScorerParams& p, std::uint64_t seed, double sd) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  visit_trainables(p, [&](const std::string&, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) data[i] = dist(rng);
  });
}

std::vector<double> random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

double loss_at(const ScorerParams& params, const std::vector<PromptTokens>& prompts,
               const std::vector<double>& labels,
               const std::vector<std::uint64_t>& dropout_seeds = {}) {
  std::vector<double> scores(prompts.size());
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    if (dropout_seeds.empty()) {
      scores[j] = forward_score(params, prompts[j]);
    } else {
      ForwardCache cache;
      Rng rng(dropout_seeds[j]);
      scores[j] = forward_cached(params, prompts[j], cache, &rng);
    }
  }
  return bce_with_logits(scores, labels);
}

struct GradCheckSetup {
  ScorerParams params;
  std::vector<PromptTokens> prompts;
  std::vector<double> labels;
};

GradCheckSetup make_setup(double dropout) {
  ScorerConfig cfg;
  cfg.d = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.tokens_per_view = 4;
  cfg.lora_rank = 4;
  cfg.lora_alpha = 8.0;
  cfg.lora_dropout = dropout;
  cfg.lora_targets = {"q", "k", "v", "o", "mlp"};
  cfg.input_dim = 32;
  cfg.seed = 555;

  GradCheckSetup s{init_params(cfg), {}, {}};
  randomize_trainables(s.params, 606, 0.05);
  std::mt19937_64 rng(808);
  s.labels = {1.0, 0.95, 0.0};
  for (std::size_t j = 0; j < s.labels.size(); ++j) {
    s.prompts.push_back(assemble_prompt(random_vec(rng, cfg.input_dim),
                                        random_vec(rng, cfg.input_dim), s.params));
  }
  return s;
}

// Central finite differences at epsilon=1e-5, relative error < 1e-4, over
// random coordinates of every trainable tensor.
void run_fd_check(GradCheckSetup& s, const std::vector<std::uint64_t>& dropout_seeds,
                  int coords_per_tensor, double tolerance, int min_coords) {
  BackwardResult analytic = backward(s.params, s.prompts, s.labels, dropout_seeds, 1);

  auto param_segs = trainable_segments(s.params);
  auto grad_segs = gradient_segments(analytic.grads);
  ASSERT_EQ(param_segs.size(), grad_segs.size());

  const double eps = 1e-5;
  std::mt19937_64 pick(13);
  int checked = 0;
  for (std::size_t t = 0; t < param_segs.size(); ++t) {
    ASSERT_EQ(param_segs[t].name, grad_segs[t].name);
    std::uniform_int_distribution<std::size_t> idx_dist(0, param_segs[t].size - 1);
    for (int c = 0; c < coords_per_tensor; ++c) {
      const std::size_t i = idx_dist(pick);
      double* coord = param_segs[t].data + i;
      const double saved = *coord;
      *coord = saved + eps;
      const double up = loss_at(s.params, s.prompts, s.labels, dropout_seeds);
      *coord = saved - eps;
      const double down = loss_at(s.params, s.prompts, s.labels, dropout_seeds);
      *coord = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = grad_segs[t].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      EXPECT_LT(std::abs(fd - an) / denom, tolerance)
          << param_segs[t].name << "[" << i << "]: analytic " << an
          << " vs fd " << fd;
      ++checked;
    }
  }
  EXPECT_GE(checked, min_coords);
}

TEST(GradCheck, AnalyticMatchesCentralDifferences) {
  GradCheckSetup s = make_setup(0.0);
  run_fd_check(s, {}, 5, 1e-4, 100);  // 25 tensors x 5 coords = 125 coordinates
}

TEST(GradCheck, HoldsUnderFixedDropoutMasks) {
  GradCheckSetup s = make_setup(0.3);
  std::vector<std::uint64_t> seeds = {91, 92, 93};
  run_fd_check(s, seeds, 2, 1e-4, 25);
}

TEST(GradCheck, ValueHeadGradientClosedForm) {
  // d(loss)/dw = (1/k) sum_j (sigma(S_j) - L_j) * h_last_j
  GradCheckSetup s = make_setup(0.0);
  BackwardResult res = backward(s.params, s.prompts, s.labels, {}, 1);

  Vec expected = Vec::Zero(s.params.config.d);
  for (std::size_t j = 0; j < s.prompts.size(); ++j) {
    ForwardCache cache;
    const double score = forward_cached(s.params, s.prompts[j], cache);
    expected += (sigmoid(score) - s.labels[j]) * cache.h_last;
  }
  expected /= static_cast<double>(s.prompts.size());
  EXPECT_LT((res.grads.value_head - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GradCheck, AllLoraGradientsVanishAtInitialization) {
  // w = 0 kills every downstream path; only the value head sees gradient.
  GradCheckSetup s = make_setup(0.0);
  ScorerParams fresh = init_params(s.params.config);
  BackwardResult res = backward(fresh, s.prompts, s.labels, {}, 1);
  for (const auto& layer : res.grads.layers) {
    for (const auto& [slot, pair] : layer.lora) {
      EXPECT_TRUE(pair.A.isZero(0.0));
      EXPECT_TRUE(pair.B.isZero(0.0));
    }
  }
  EXPECT_FALSE(res.grads.value_head.isZero(0.0));
}

TEST(GradCheck, DeterministicAcrossThreadCounts) {
  GradCheckSetup s = make_setup(0.05);
  std::vector<std::uint64_t> seeds = {5, 6, 7};
  BackwardResult serial = backward(s.params, s.prompts, s.labels, seeds, 1);
  BackwardResult parallel = backward(s.params, s.prompts, s.labels, seeds, 4);
  EXPECT_EQ(serial.loss, parallel.loss);
  auto a = gradient_segments(serial.grads);
  auto b = gradient_segments(parallel.grads);
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size; ++i) {
      EXPECT_EQ(a[t].data[i], b[t].data[i]) << a[t].name;
    }
  }
}

TEST(GradCheck, FrozenTensorsUntouchedByBackward) {
  GradCheckSetup s = make_setup(0.0);
  const std::string before = serialize_params(s.params);
  backward(s.params, s.prompts, s.labels, {}, 1);
  EXPECT_EQ(serialize_params(s.params), before);
}

}  // namespace
}  // namespace skyrank
