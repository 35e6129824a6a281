// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "skyrank/eval.hpp"

namespace skyrank {
namespace {

TEST(RecallAtK, BasicCases) {
  EXPECT_EQ(recall_at_k({"gt", "a", "b"}, "gt", 1), 1);
  EXPECT_EQ(recall_at_k({"a", "b", "c", "d", "e", "gt"}, "gt", 5), 0);
  EXPECT_EQ(recall_at_k({"a", "b"}, "gt", 10), 0);
  EXPECT_THROW(recall_at_k({"a"}, "gt", 0), ValidationError);
}

TEST(RecallAtK, MonotoneInK) {
  std::vector<std::string> ranked{"a", "b", "gt", "c"};
  int prev = 0;
  for (std::size_t K = 1; K <= 6; ++K) {
    const int r = recall_at_k(ranked, "gt", K);
    EXPECT_GE(r, prev);
    prev = r;
  }
}

TEST(AveragePrecision, SinglePositiveIsReciprocalRank) {
  EXPECT_DOUBLE_EQ(average_precision({"gt", "a"}, "gt"), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({"a", "b", "c", "gt"}, "gt"), 0.25);
}

TEST(AveragePrecision, AbsentPositiveScoresZero) {
  EXPECT_DOUBLE_EQ(average_precision({"a", "b"}, "gt"), 0.0);
}

TEST(AveragePrecision, DuplicatesRejected) {
  EXPECT_THROW(average_precision({"a", "a"}, "gt"), ValidationError);
  EXPECT_THROW(average_precision({}, "gt"), ValidationError);
}

TEST(EvaluateRun, TwoQueryExample) {
  // gt ranks {1, 2}: R@1 = 50, R@5 = 100, AP = mean(1, 1/2) * 100 = 75.
  std::vector<RankedQuery> results = {
      {"q1", {"gt1", "x", "y"}, "gt1"},
      {"q2", {"x", "gt2", "y"}, "gt2"},
  };
  EvalReport r = evaluate_run(results, {1, 5});
  EXPECT_DOUBLE_EQ(r.recall_at.at(1), 50.0);
  EXPECT_DOUBLE_EQ(r.recall_at.at(5), 100.0);
  EXPECT_DOUBLE_EQ(r.ap, 75.0);
  ASSERT_EQ(r.per_query.size(), 2u);
  EXPECT_EQ(r.per_query[0].gt_rank, 1u);
  EXPECT_EQ(r.per_query[1].gt_rank, 2u);
}

TEST(EvaluateRun, AllRankOneGivesHundred) {
  std::vector<RankedQuery> results;
  for (int i = 0; i < 7; ++i) {
    results.push_back({"q" + std::to_string(i), {"g" + std::to_string(i), "x" + std::to_string(i)},
                       "g" + std::to_string(i)});
  }
  EvalReport r = evaluate_run(results, {1, 5, 10});
  EXPECT_DOUBLE_EQ(r.recall_at.at(1), 100.0);
  EXPECT_DOUBLE_EQ(r.recall_at.at(10), 100.0);
  EXPECT_DOUBLE_EQ(r.ap, 100.0);
}

TEST(EvaluateRun, AllAbsentGivesZero) {
  std::vector<RankedQuery> results = {{"q1", {"a"}, "gt1"}, {"q2", {"b"}, "gt2"}};
  EvalReport r = evaluate_run(results, {1, 5});
  EXPECT_DOUBLE_EQ(r.recall_at.at(1), 0.0);
  EXPECT_DOUBLE_EQ(r.recall_at.at(5), 0.0);
  EXPECT_DOUBLE_EQ(r.ap, 0.0);
  EXPECT_FALSE(r.per_query[0].gt_rank.has_value());
}

TEST(EvaluateRun, EmptyRejected) {
  EXPECT_THROW(evaluate_run({}, {1}), ValidationError);
}

TEST(EvaluateRun, CouplingBetweenApAndRecall) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> len_dist(1, 12);
    const int len = len_dist(rng);
    std::vector<std::string> ranked;
    for (int i = 0; i < len; ++i) ranked.push_back("c" + std::to_string(i));
    std::uniform_int_distribution<int> gt_dist(0, len + 3);
    const int slot = gt_dist(rng);
    std::string gt = "gt";
    if (slot < len) ranked[static_cast<std::size_t>(slot)] = "gt";

    EvalReport r = evaluate_run({{"q", ranked, gt}}, {1});
    const double ap = r.per_query[0].ap;
    if (r.recall_at.at(1) == 100.0) EXPECT_DOUBLE_EQ(ap, 1.0);
    EXPECT_EQ(ap > 0.0, r.per_query[0].gt_rank.has_value());
  }
}

// Brute-force reference: recompute every metric with naive loops and check
// exact equality against evaluate_run.
struct NaiveReference {
  double r1 = 0, r5 = 0, r10 = 0, ap = 0;
};

NaiveReference naive_eval(const std::vector<RankedQuery>& results) {
  NaiveReference out;
  double s1 = 0, s5 = 0, s10 = 0, sap = 0;
  for (const auto& q : results) {
    int rank = 0;
    for (std::size_t i = 0; i < q.ranked.size(); ++i) {
      if (q.ranked[i] == q.gt_id) {
        rank = static_cast<int>(i) + 1;
        break;
      }
    }
    if (rank >= 1 && rank <= 1) s1 += 1;
    if (rank >= 1 && rank <= 5) s5 += 1;
    if (rank >= 1 && rank <= 10) s10 += 1;
    if (rank >= 1) sap += 1.0 / rank;
  }
  const double n = static_cast<double>(results.size());
  out.r1 = (s1 / n) * 100.0;
  out.r5 = (s5 / n) * 100.0;
  out.r10 = (s10 / n) * 100.0;
  out.ap = (sap / n) * 100.0;
  return out;
}

TEST(EvaluateRun, MatchesBruteForceReferenceExactly) {
  std::mt19937_64 rng(2468);
  std::uniform_int_distribution<int> n_dist(1, 20);
  std::uniform_int_distribution<int> len_dist(1, 30);
  for (int instance = 0; instance < 1000; ++instance) {
    std::vector<RankedQuery> results;
    const int nq = n_dist(rng);
    for (int q = 0; q < nq; ++q) {
      RankedQuery rq;
      rq.query_id = "q" + std::to_string(q);
      rq.gt_id = "gt" + std::to_string(q);
      const int len = len_dist(rng);
      std::uniform_int_distribution<int> slot_dist(0, len + len / 2);
      const int slot = slot_dist(rng);
      for (int i = 0; i < len; ++i) {
        rq.ranked.push_back(i == slot ? rq.gt_id : "c" + std::to_string(i));
      }
      results.push_back(std::move(rq));
    }
    EvalReport got = evaluate_run(results, {1, 5, 10});
    NaiveReference want = naive_eval(results);
    EXPECT_EQ(got.recall_at.at(1), want.r1);
    EXPECT_EQ(got.recall_at.at(5), want.r5);
    EXPECT_EQ(got.recall_at.at(10), want.r10);
    EXPECT_EQ(got.ap, want.ap);
  }
}

TEST(EvalReport, SummaryCsvFormat) {
  std::vector<RankedQuery> results = {{"q1", {"gt1", "x"}, "gt1"},
                                      {"q2", {"x", "gt2"}, "gt2"}};
  EvalReport r = evaluate_run(results, {1, 5, 10});
  const std::string csv = eval_summary_csv({{"demo", r}});
  EXPECT_EQ(csv, "run_id,n_queries,R@1,R@5,R@10,AP\ndemo,2,50.00,100.00,100.00,75.00\n");
}

TEST(EvalReport, PerQueryJsonl) {
  std::vector<RankedQuery> results = {{"q1", {"a"}, "gt"}};
  EvalReport r = evaluate_run(results, {1});
  const std::string jsonl = per_query_jsonl(r);
  EXPECT_NE(jsonl.find("\"gt_rank\":null"), std::string::npos);
}

}  // namespace
}  // namespace skyrank
