// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "skyrank/gallery.hpp"
#include "skyrank/scorer.hpp"

namespace skyrank {

// Re-ranked candidate list for one query. reranked_order is always a
// permutation of original_order; the prediction is its head.
struct RerankResult {
  std::string query_id;
  std::vector<std::string> original_order;
  std::vector<double> scores;  // aligned with original_order
  std::vector<std::string> reranked_order;
  std::string predicted_id;
};

// One query's full inference record: the raw retrieval ranking (m ids), the
// re-ranked head, and the final ranking with the reranked top-k spliced
// ahead of the untouched retrieval tail.
struct QueryRerank {
  RerankResult result;
  std::vector<std::string> retrieval_order;
  std::vector<std::string> final_ranking;
};

using ScoreFn = std::function<std::vector<double>(
    const Embedding& query, const std::vector<const Embedding*>& candidates)>;

// Element j is the score of (query, candidates[j]); order preserved.
inline std::vector<double> score_candidates(
    const ScorerParams& params, const Embedding& query,
    const std::vector<const Embedding*>& candidates, int threads = 1) {
  if (candidates.empty()) throw ValidationError("score_candidates: no candidates");
  std::vector<PromptTokens> prompts;
  prompts.reserve(candidates.size());
  for (const Embedding* c : candidates) {
    prompts.push_back(assemble_prompt(query.vec, c->vec, params));
  }
  Vec s = forward_scores(params, prompts, threads);
  return std::vector<double>(s.data(), s.data() + s.size());
}

inline ScoreFn make_scorer(const ScorerParams& params, int threads = 1) {
  return [&params, threads](const Embedding& query,
                            const std::vector<const Embedding*>& candidates) {
    return score_candidates(params, query, candidates, threads);
  };
}

// Stable descending sort by score; ties keep the original retrieval order so
// a constant scorer reproduces the retriever exactly.
inline RerankResult rerank(const std::vector<double>& scores,
                           const std::vector<std::string>& original_order,
                           const std::string& query_id = "") {
  if (scores.size() != original_order.size()) {
    throw ValidationError("rerank: scores/candidates length mismatch");
  }
  if (scores.empty()) throw ValidationError("rerank: empty candidate list");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("rerank: non-finite score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RerankResult result;
  result.query_id = query_id;
  result.original_order = original_order;
  result.scores = scores;
  result.reranked_order.reserve(order.size());
  for (std::size_t i : order) result.reranked_order.push_back(original_order[i]);
  result.predicted_id = result.reranked_order.front();
  return result;
}

// Retrieve top-m, re-score the first k_rerank with the scorer, and splice
// the re-ranked head ahead of the untouched tail. Queries are independent;
// output order matches input order.
inline std::vector<QueryRerank> rerank_run(const ScoreFn& scorer,
                                           const std::vector<Embedding>& queries,
                                           const Gallery& gallery,
                                           std::size_t m_retrieve,
                                           std::size_t k_rerank) {
  if (k_rerank == 0) throw ValidationError("rerank_run: k_rerank must be positive");
  if (k_rerank > m_retrieve) {
    throw ValidationError("rerank_run: k_rerank exceeds m_retrieve");
  }
  if (m_retrieve > gallery.size()) {
    throw ValidationError("rerank_run: m_retrieve exceeds gallery size");
  }

  std::vector<QueryRerank> out;
  out.reserve(queries.size());
  for (const Embedding& query : queries) {
    RetrievalResult retrieved = retrieve_top_m(gallery, query, m_retrieve);

    QueryRerank qr;
    qr.retrieval_order = retrieved.ids();

    std::vector<std::string> head(qr.retrieval_order.begin(),
                                  qr.retrieval_order.begin() +
                                      static_cast<std::ptrdiff_t>(k_rerank));
    std::vector<const Embedding*> cands;
    cands.reserve(head.size());
    for (const std::string& id : head) cands.push_back(&gallery.by_id(id));

    qr.result = rerank(scorer(query, cands), head, query.id);

    qr.final_ranking = qr.result.reranked_order;
    qr.final_ranking.insert(qr.final_ranking.end(),
                            qr.retrieval_order.begin() +
                                static_cast<std::ptrdiff_t>(k_rerank),
                            qr.retrieval_order.end());
    out.push_back(std::move(qr));
  }
  return out;
}

inline std::vector<QueryRerank> rerank_run(const ScorerParams& params,
                                           const std::vector<Embedding>& queries,
                                           const Gallery& gallery,
                                           std::size_t m_retrieve,
                                           std::size_t k_rerank, int threads = 1) {
  return rerank_run(make_scorer(params, threads), queries, gallery, m_retrieve,
                    k_rerank);
}

}  // namespace skyrank
