// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skyrank/common.hpp"
#include "skyrank/util.hpp"

namespace skyrank {

// 1 if the ground truth appears within the first K positions, else 0.
inline int recall_at_k(const std::vector<std::string>& ranked,
                       const std::string& gt_id, std::size_t K) {
  if (K < 1) throw ValidationError("recall_at_k: K must be >= 1");
  const std::size_t limit = std::min(K, ranked.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (ranked[i] == gt_id) return 1;
  }
  return 0;
}

// Single-positive average precision: 1/rank of the ground truth, with the
// conservative convention that a list missing its positive scores 0.
inline double average_precision(const std::vector<std::string>& ranked,
                                const std::string& gt_id) {
  if (ranked.empty()) throw ValidationError("average_precision: empty ranking");
  std::set<std::string> seen;
  for (const std::string& id : ranked) {
    if (!seen.insert(id).second) {
      throw ValidationError("average_precision: duplicate id \"" + id + "\"");
    }
  }
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i] == gt_id) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

struct PerQueryEval {
  std::string query_id;
  std::optional<std::size_t> gt_rank;  // 1-based; absent if not retrieved
  double ap = 0.0;
};

struct EvalReport {
  std::size_t n_queries = 0;
  std::map<std::size_t, double> recall_at;  // K -> percentage
  double ap = 0.0;                          // percentage
  std::vector<PerQueryEval> per_query;
};

struct RankedQuery {
  std::string query_id;
  std::vector<std::string> ranked;
  std::string gt_id;
};

// Means over queries, scaled x100.
inline EvalReport evaluate_run(const std::vector<RankedQuery>& results,
                               const std::vector<std::size_t>& Ks) {
  if (results.empty()) throw ValidationError("evaluate_run: no results");
  EvalReport report;
  report.n_queries = results.size();

  std::map<std::size_t, double> recall_sums;
  for (std::size_t K : Ks) recall_sums[K] = 0.0;
  double ap_sum = 0.0;

  for (const RankedQuery& r : results) {
    PerQueryEval pq;
    pq.query_id = r.query_id;
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
      if (r.ranked[i] == r.gt_id) {
        pq.gt_rank = i + 1;
        break;
      }
    }
    pq.ap = average_precision(r.ranked, r.gt_id);
    ap_sum += pq.ap;
    for (std::size_t K : Ks) recall_sums[K] += recall_at_k(r.ranked, r.gt_id, K);
    report.per_query.push_back(std::move(pq));
  }

  const double n = static_cast<double>(results.size());
  for (std::size_t K : Ks) report.recall_at[K] = (recall_sums[K] / n) * 100.0;
  report.ap = (ap_sum / n) * 100.0;
  return report;
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json recalls;
  for (const auto& [K, v] : r.recall_at) recalls["R@" + std::to_string(K)] = v;
  return nlohmann::ordered_json{
      {"n_queries", r.n_queries}, {"recall_at", recalls}, {"ap", r.ap}};
}

// Summary CSV row: run_id, n_queries, R@1, R@5, R@10, AP (two decimals).
inline std::string eval_summary_csv(
    const std::vector<std::pair<std::string, EvalReport>>& runs) {
  std::ostringstream out;
  out << "run_id,n_queries,R@1,R@5,R@10,AP\n";
  for (const auto& [run_id, r] : runs) {
    out << run_id << "," << r.n_queries;
    for (std::size_t K : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
      auto it = r.recall_at.find(K);
      if (it == r.recall_at.end()) {
        throw ValidationError("eval summary requires R@" + std::to_string(K));
      }
      out << "," << format_fixed(it->second, 2);
    }
    out << "," << format_fixed(r.ap, 2) << "\n";
  }
  return out.str();
}

inline std::string per_query_jsonl(const EvalReport& r) {
  std::ostringstream out;
  for (const PerQueryEval& pq : r.per_query) {
    nlohmann::ordered_json row;
    row["query"] = pq.query_id;
    if (pq.gt_rank) {
      row["gt_rank"] = *pq.gt_rank;
    } else {
      row["gt_rank"] = nullptr;
    }
    row["ap"] = pq.ap;
    out << row.dump() << "\n";
  }
  return out.str();
}

}  // namespace skyrank
