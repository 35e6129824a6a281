// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "skyrank/checkpoint.hpp"
#include "skyrank/curation.hpp"
#include "skyrank/gallery.hpp"
#include "skyrank/labels.hpp"
#include "skyrank/scorer.hpp"

namespace skyrank {

struct TrainConfig {
  double T = 0.9;                 // similarity threshold
  int k = 7;                      // training candidate count (GT + k-1 negatives)
  double learning_rate = 1e-4;
  int batch_size = 4;
  int epochs = 1;
  std::string optimizer = "adamw";  // "adamw" | "sgd"
  std::string label_mode = "soft";
  double weight_decay = 0.0;
  std::uint64_t seed = 7;
  bool shuffle = true;
  int threads = 1;

  LabelMode mode() const { return label_mode_from_name(label_mode); }

  void validate() const {
    if (!(T >= 0.0 && T <= 1.0)) throw ValidationError("train: T must be in [0, 1]");
    if (k < 2) throw ValidationError("train: k must be at least 2");
    if (learning_rate < 0.0) throw ValidationError("train: negative learning rate");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
    if (optimizer != "adamw" && optimizer != "sgd") {
      throw ValidationError("train: unknown optimizer \"" + optimizer + "\"");
    }
    label_mode_from_name(label_mode);
  }
};

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = nlohmann::ordered_json{{"T", c.T},
                             {"k", c.k},
                             {"learning_rate", c.learning_rate},
                             {"batch_size", c.batch_size},
                             {"epochs", c.epochs},
                             {"optimizer", c.optimizer},
                             {"label_mode", c.label_mode},
                             {"weight_decay", c.weight_decay},
                             {"seed", c.seed},
                             {"shuffle", c.shuffle},
                             {"threads", c.threads}};
}

template <class Json>
void train_config_from_json(const Json& j, TrainConfig& c) {
  c.T = j.value("T", c.T);
  c.k = j.value("k", c.k);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.label_mode = j.value("label_mode", c.label_mode);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.threads = j.value("threads", c.threads);
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) { train_config_from_json(j, c); }
inline void from_json(const nlohmann::ordered_json& j, TrainConfig& c) { train_config_from_json(j, c); }

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<double> epoch_mean_losses;
  double loss_variance = 0.0;
  double second_half_variance = 0.0;
  std::string final_param_checksum;
};

inline double population_variance(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
                      static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(xs.size());
}

inline nlohmann::ordered_json train_report_to_json(const TrainReport& r) {
  return nlohmann::ordered_json{{"steps", r.step_losses.size()},
                                {"step_losses", r.step_losses},
                                {"epoch_mean_losses", r.epoch_mean_losses},
                                {"loss_variance", r.loss_variance},
                                {"second_half_variance", r.second_half_variance},
                                {"final_param_checksum", r.final_param_checksum}};
}

inline std::string losses_to_csv(const TrainReport& r) {
  std::ostringstream out;
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.step_losses.size(); ++i) {
    out << i << "," << r.step_losses[i] << "\n";
  }
  return out.str();
}

// The GT plus the top-(k-1) hardest negatives by retriever similarity; the
// GT lands at a seeded-random slot so its position carries no signal.
struct TrainingCandidates {
  std::vector<std::string> ids;
  std::size_t gt_index = 0;
};

inline TrainingCandidates select_training_candidates(const RankSample& sample,
                                                     std::size_t k, Rng& rng) {
  if (k < 1) throw ValidationError("select_training_candidates: k must be >= 1");
  if (k - 1 > sample.candidate_ids.size()) {
    throw ValidationError("select_training_candidates: k-1 exceeds candidate count");
  }
  TrainingCandidates out;
  out.ids.assign(sample.candidate_ids.begin(),
                 sample.candidate_ids.begin() + static_cast<std::ptrdiff_t>(k - 1));
  std::uniform_int_distribution<std::size_t> slot(0, out.ids.size());
  out.gt_index = slot(rng);
  out.ids.insert(out.ids.begin() + static_cast<std::ptrdiff_t>(out.gt_index),
                 sample.gt_id);
  return out;
}

// Loss and exact reverse-mode gradients for one candidate set.
struct BackwardResult {
  double loss = 0.0;
  std::vector<double> scores;
  GradBuffers grads;
};

// Reverse-mode differentiation of the mean BCE through the scorer. When
// dropout_seeds is non-empty it must carry one stream seed per prompt; masks
// are drawn per prompt so parallel order cannot change the result.
inline BackwardResult backward(const ScorerParams& params,
                               const std::vector<PromptTokens>& prompts,
                               const std::vector<double>& labels,
                               const std::vector<std::uint64_t>& dropout_seeds = {},
                               int threads = 1) {
  const std::size_t k = prompts.size();
  if (k == 0) throw ValidationError("backward: no prompts");
  if (labels.size() != k) throw ValidationError("backward: labels/prompts length mismatch");
  if (!dropout_seeds.empty() && dropout_seeds.size() != k) {
    throw ValidationError("backward: dropout_seeds/prompts length mismatch");
  }

  std::vector<ForwardCache> caches(k);
  std::vector<GradBuffers> prompt_grads;
  prompt_grads.reserve(k);
  for (std::size_t j = 0; j < k; ++j) prompt_grads.push_back(GradBuffers::zeros_like(params));

  const int n_threads = resolve_threads(threads);
  bool failed = false;
  std::string error;
#pragma omp parallel for schedule(static) num_threads(n_threads)
  for (long j = 0; j < static_cast<long>(k); ++j) {
    try {
      const auto idx = static_cast<std::size_t>(j);
      if (dropout_seeds.empty()) {
        forward_cached(params, prompts[idx], caches[idx], nullptr);
      } else {
        Rng rng(dropout_seeds[idx]);
        forward_cached(params, prompts[idx], caches[idx], &rng);
      }
    } catch (const std::exception& e) {
#pragma omp critical
      {
        if (!failed) { failed = true; error = e.what(); }
      }
    }
  }
  if (failed) throw NumericError(error);

  BackwardResult result;
  result.scores.resize(k);
  std::vector<double> dscores(k);
  for (std::size_t j = 0; j < k; ++j) result.scores[j] = caches[j].score;
  result.loss = bce_with_logits(result.scores, labels);
  for (std::size_t j = 0; j < k; ++j) {
    dscores[j] = (sigmoid(result.scores[j]) - labels[j]) / static_cast<double>(k);
  }

#pragma omp parallel for schedule(static) num_threads(n_threads)
  for (long j = 0; j < static_cast<long>(k); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    backward_prompt(params, caches[idx], dscores[idx], prompt_grads[idx]);
  }

  result.grads = GradBuffers::zeros_like(params);
  for (std::size_t j = 0; j < k; ++j) result.grads.add_scaled(prompt_grads[j], 1.0);

  visit_gradients(result.grads, [](const std::string& name, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(data[i])) {
        throw NumericError("non-finite gradient in tensor \"" + name + "\"");
      }
    }
  });
  return result;
}

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ScorerParams& params, GradBuffers& grads) = 0;
};

class SgdOptimizer : public Optimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}

  void step(ScorerParams& params, GradBuffers& grads) override {
    std::vector<std::pair<double*, std::size_t>> ps, gs;
    visit_trainables(params, [&](const std::string&, double* d, std::size_t n) {
      ps.emplace_back(d, n);
    });
    visit_gradients(grads, [&](const std::string&, double* d, std::size_t n) {
      gs.emplace_back(d, n);
    });
    for (std::size_t t = 0; t < ps.size(); ++t) {
      for (std::size_t i = 0; i < ps[t].second; ++i) {
        ps[t].first[i] -= lr_ * gs[t].first[i];
      }
    }
  }

 private:
  double lr_;
};

// Adam with decoupled weight decay.
class AdamWOptimizer : public Optimizer {
 public:
  AdamWOptimizer(double lr, double weight_decay = 0.0, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ScorerParams& params, GradBuffers& grads) override {
    std::vector<std::pair<double*, std::size_t>> ps, gs;
    visit_trainables(params, [&](const std::string&, double* d, std::size_t n) {
      ps.emplace_back(d, n);
    });
    visit_gradients(grads, [&](const std::string&, double* d, std::size_t n) {
      gs.emplace_back(d, n);
    });
    std::size_t total = 0;
    for (auto& [d, n] : ps) total += n;
    if (m_.empty()) {
      m_.assign(total, 0.0);
      v_.assign(total, 0.0);
    } else if (m_.size() != total) {
      throw ValidationError("optimizer state does not match parameter count");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t off = 0;
    for (std::size_t t = 0; t < ps.size(); ++t) {
      double* p = ps[t].first;
      const double* g = gs[t].first;
      for (std::size_t i = 0; i < ps[t].second; ++i, ++off) {
        m_[off] = beta1_ * m_[off] + (1.0 - beta1_) * g[i];
        v_[off] = beta2_ * v_[off] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m_[off] / bc1;
        const double vhat = v_[off] / bc2;
        p[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[i]);
      }
    }
  }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
  if (cfg.optimizer == "sgd") return std::make_unique<SgdOptimizer>(cfg.learning_rate);
  return std::make_unique<AdamWOptimizer>(cfg.learning_rate, cfg.weight_decay);
}

namespace detail {

inline std::vector<double> top1_labels(const Embedding& query,
                                       const std::vector<const Embedding*>& candidates) {
  std::vector<double> labels(candidates.size(), 0.0);
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const double s = cosine_similarity(query.vec, candidates[j]->vec);
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  labels[best] = 1.0;
  return labels;
}

}  // namespace detail

// One pass of Algorithm-style training: per sample select candidates,
// assemble prompts, score, build labels, take the mean BCE gradient per
// batch, and update {A_l, B_l, value_head}. Deterministic under a fixed seed
// at any thread count: dropout masks and GT placement draw from per-sample
// streams and gradients reduce in index order.
inline TrainReport train(const RankDataset& dataset, const Gallery& gallery,
                         const std::vector<Embedding>& queries,
                         ScorerParams& params, const TrainConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(cfg.k) > dataset.m) {
    throw ValidationError("train: k exceeds the dataset's candidate budget m");
  }
  check_dataset_against_gallery(dataset, gallery);

  std::unordered_map<std::string, const Embedding*> query_index;
  for (const Embedding& q : queries) query_index[q.id] = &q;
  for (const RankSample& s : dataset.samples) {
    if (!query_index.count(s.query_id)) {
      throw DataError("train: query \"" + s.query_id + "\" missing from query set");
    }
  }

  const LabelMode mode = cfg.mode();
  auto optimizer = make_optimizer(cfg);
  Rng order_rng = make_rng(cfg.seed, fnv1a64("order"));
  Rng placement_rng = make_rng(cfg.seed, fnv1a64("gt-placement"));

  TrainReport report;
  const std::size_t n = dataset.samples.size();
  std::size_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);

    std::vector<double> epoch_losses;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);

      GradBuffers batch_grads = GradBuffers::zeros_like(params);
      double batch_loss = 0.0;

      for (std::size_t pos = start; pos < end; ++pos) {
        const RankSample& sample = dataset.samples[order[pos]];
        try {
          TrainingCandidates tc = select_training_candidates(
              sample, static_cast<std::size_t>(cfg.k), placement_rng);

          const Embedding& query = *query_index.at(sample.query_id);
          const Embedding& gt = gallery.by_id(sample.gt_id);
          std::vector<const Embedding*> cands;
          cands.reserve(tc.ids.size());
          for (const std::string& id : tc.ids) cands.push_back(&gallery.by_id(id));

          std::vector<PromptTokens> prompts;
          prompts.reserve(cands.size());
          for (const Embedding* c : cands) {
            prompts.push_back(assemble_prompt(query.vec, c->vec, params));
          }

          std::vector<double> labels;
          if (mode == LabelMode::Top1) {
            labels = detail::top1_labels(query, cands);
          } else {
            labels = compute_soft_labels(cands, gt, cfg.T, mode).labels;
          }

          std::vector<std::uint64_t> dropout_seeds;
          if (params.config.lora_dropout > 0.0) {
            dropout_seeds.resize(prompts.size());
            for (std::size_t j = 0; j < prompts.size(); ++j) {
              dropout_seeds[j] =
                  mix_seed(cfg.seed, fnv1a64("dropout"), global_step, order[pos], j);
            }
          }

          BackwardResult res =
              backward(params, prompts, labels, dropout_seeds, cfg.threads);
          batch_grads.add_scaled(res.grads, inv_batch);
          batch_loss += res.loss * inv_batch;
        } catch (const ValidationError& e) {
          throw ValidationError("train: sample \"" + sample.query_id + "\": " + e.what());
        } catch (const DataError& e) {
          throw DataError("train: sample \"" + sample.query_id + "\": " + e.what());
        } catch (const std::exception& e) {
          throw NumericError("train: sample \"" + sample.query_id + "\": " + e.what());
        }
      }

      optimizer->step(params, batch_grads);
      report.step_losses.push_back(batch_loss);
      epoch_losses.push_back(batch_loss);
      ++global_step;
    }

    if (!epoch_losses.empty()) {
      report.epoch_mean_losses.push_back(
          std::accumulate(epoch_losses.begin(), epoch_losses.end(), 0.0) /
          static_cast<double>(epoch_losses.size()));
    }
  }

  report.loss_variance = population_variance(report.step_losses);
  std::vector<double> second_half(report.step_losses.begin() +
                                      static_cast<std::ptrdiff_t>(report.step_losses.size() / 2),
                                  report.step_losses.end());
  report.second_half_variance = population_variance(second_half);
  report.final_param_checksum = params_checksum(params);
  return report;
}

}  // namespace skyrank
