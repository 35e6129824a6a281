// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <vector>

#include "skyrank/curation.hpp"

namespace skyrank {
namespace {

RetrievalResult make_retrieved(std::vector<std::string> ids) {
  RetrievalResult r;
  r.query_id = "q";
  double sim = 0.99;
  for (auto& id : ids) {
    r.ranked.emplace_back(std::move(id), sim);
    sim -= 0.01;
  }
  return r;
}

TEST(CurateCandidates, DropsGroundTruthWhenRetrieved) {
  auto out = curate_candidates(make_retrieved({"gt", "x", "y"}), "gt", 3);
  EXPECT_EQ(out, (std::vector<std::string>{"x", "y"}));
}

TEST(CurateCandidates, DropsLastWhenGroundTruthAbsent) {
  auto out = curate_candidates(make_retrieved({"x", "y", "z"}), "w", 3);
  EXPECT_EQ(out, (std::vector<std::string>{"x", "y"}));
}

TEST(CurateCandidates, InteriorGroundTruthKeepsOrder) {
  auto out = curate_candidates(make_retrieved({"x", "gt", "y"}), "gt", 3);
  EXPECT_EQ(out, (std::vector<std::string>{"x", "y"}));
}

TEST(CurateCandidates, Errors) {
  EXPECT_THROW(curate_candidates(make_retrieved({"x", "y"}), "gt", 3), ValidationError);
  EXPECT_THROW(curate_candidates(make_retrieved({"x"}), "gt", 1), ValidationError);
}

Embedding ref(const std::string& id, std::vector<double> v) {
  return Embedding{id, std::move(v), View::Reference};
}

TEST(BuildRankSample, GroundTruthRankOne) {
  Gallery g = build_gallery({ref("gt", {1, 0}), ref("b", {0.9, 0.4}), ref("c", {0, 1})});
  Embedding q{"q", {1, 0.01}, View::Query};
  RankSample s = build_rank_sample(q, g, "gt", 3);
  EXPECT_EQ(s.candidate_ids.size(), 2u);
  EXPECT_EQ(std::count(s.candidate_ids.begin(), s.candidate_ids.end(), "gt"), 0);
  validate_sample(s, 3);
}

TEST(BuildRankSample, GroundTruthOutsideTopM) {
  // gt points away from the query; with m=2 it is never retrieved.
  Gallery g = build_gallery({ref("a", {1, 0}), ref("b", {0.9, 0.1}),
                             ref("gt", {-1, 0})});
  Embedding q{"q", {1, 0}, View::Query};
  RankSample s = build_rank_sample(q, g, "gt", 2);
  EXPECT_EQ(s.candidate_ids, (std::vector<std::string>{"a"}));
  EXPECT_EQ(s.candidate_sims.size(), 1u);
}

TEST(BuildRankSample, BoundaryMTwo) {
  Gallery g = build_gallery({ref("gt", {1, 0}), ref("b", {0, 1})});
  Embedding q{"q", {1, 0.2}, View::Query};
  RankSample s = build_rank_sample(q, g, "gt", 2);
  EXPECT_EQ(s.candidate_ids.size(), 1u);
}

TEST(BuildRankSample, UnknownGtRejected) {
  Gallery g = build_gallery({ref("a", {1, 0})});
  Embedding q{"q", {1, 0}, View::Query};
  EXPECT_THROW(build_rank_sample(q, g, "nope", 1), DataError);
}

TEST(BuildRankSample, SurvivingOrderEqualsRetrievalOrderWithGtDeleted) {
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Embedding> entries;
    for (int i = 0; i < 40; ++i) {
      std::vector<double> v(8);
      for (double& x : v) x = dist(rng);
      entries.push_back(ref("e" + std::to_string(i), v));
    }
    Gallery g = build_gallery(std::move(entries));
    std::vector<double> qv(8);
    for (double& x : qv) x = dist(rng);
    Embedding q{"q", qv, View::Query};

    const std::size_t m = 10;
    RetrievalResult retrieved = retrieve_top_m(g, q, m);
    // pick the gt to be the rank-j retrieved item
    std::uniform_int_distribution<std::size_t> jdist(0, m - 1);
    const std::string gt = retrieved.ranked[jdist(rng)].first;

    RankSample s = build_rank_sample(q, g, gt, m);
    std::vector<std::string> expected;
    for (const auto& [id, sim] : retrieved.ranked) {
      if (id != gt) expected.push_back(id);
    }
    EXPECT_EQ(s.candidate_ids, expected);
    for (std::size_t i = 1; i < s.candidate_sims.size(); ++i) {
      EXPECT_LE(s.candidate_sims[i], s.candidate_sims[i - 1]);
    }
  }
}

RankDataset small_dataset() {
  RankDataset d;
  d.m = 3;
  d.gallery_sha256 = "00ff";
  d.samples.push_back({"q1", "gt1", {"a", "b"}, {0.9, 0.8}});
  d.samples.push_back({"q2", "gt2", {"c", "d"}, {0.7, 0.5}});
  return d;
}

TEST(Manifest, RoundTripIdentity) {
  RankDataset d = small_dataset();
  const std::string text = manifest_to_jsonl(d);
  RankDataset back = parse_manifest_jsonl(text, "test");
  EXPECT_EQ(back, d);
  EXPECT_EQ(manifest_to_jsonl(back), text);
}

TEST(Manifest, FileRoundTrip) {
  RankDataset d = small_dataset();
  auto path = std::filesystem::temp_directory_path() / "skyrank_manifest_test.jsonl";
  write_manifest(d, path);
  RankDataset back = read_manifest(path);
  EXPECT_EQ(back, d);
  std::filesystem::remove(path);
}

TEST(Manifest, RejectsWrongCandidateCount) {
  const std::string header =
      "{\"format\":\"skyrank-manifest\",\"version\":1,\"m\":3,\"gallery_sha256\":\"\"}\n";
  const std::string bad_row =
      "{\"query\":\"q\",\"gt\":\"g\",\"cands\":[\"a\"],\"sims\":[0.5]}\n";
  EXPECT_THROW(parse_manifest_jsonl(header + bad_row, "t"), DataError);
}

TEST(Manifest, RejectsGtAmongCandidates) {
  const std::string header =
      "{\"format\":\"skyrank-manifest\",\"version\":1,\"m\":3,\"gallery_sha256\":\"\"}\n";
  const std::string bad_row =
      "{\"query\":\"q\",\"gt\":\"g\",\"cands\":[\"a\",\"g\"],\"sims\":[0.5,0.4]}\n";
  EXPECT_THROW(parse_manifest_jsonl(header + bad_row, "t"), DataError);
}

TEST(Manifest, RejectsIncreasingSims) {
  const std::string header =
      "{\"format\":\"skyrank-manifest\",\"version\":1,\"m\":3,\"gallery_sha256\":\"\"}\n";
  const std::string bad_row =
      "{\"query\":\"q\",\"gt\":\"g\",\"cands\":[\"a\",\"b\"],\"sims\":[0.4,0.5]}\n";
  EXPECT_THROW(parse_manifest_jsonl(header + bad_row, "t"), DataError);
}

// Eq.-style invariants over random galleries, both rule branches included.
TEST(Curation, PropertyGtExclusionAndSize) {
  std::mt19937_64 rng(20240809);
  std::normal_distribution<double> dist(0.0, 1.0);
  int branch_present = 0, branch_absent = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> n_dist(5, 60);
    const int n = n_dist(rng);
    std::vector<Embedding> entries;
    for (int i = 0; i < n; ++i) {
      std::vector<double> v(6);
      for (double& x : v) x = dist(rng);
      entries.push_back(ref("e" + std::to_string(i), v));
    }
    Gallery g = build_gallery(std::move(entries));
    std::uniform_int_distribution<int> m_dist(2, n);
    const std::size_t m = static_cast<std::size_t>(m_dist(rng));
    std::uniform_int_distribution<int> gt_dist(0, n - 1);
    const std::string gt = "e" + std::to_string(gt_dist(rng));

    std::vector<double> qv(6);
    for (double& x : qv) x = dist(rng);
    Embedding q{"q", qv, View::Query};

    RetrievalResult retrieved = retrieve_top_m(g, q, m);
    bool present = false;
    for (const auto& [id, sim] : retrieved.ranked) present |= (id == gt);
    (present ? branch_present : branch_absent)++;

    RankSample s = build_rank_sample(q, g, gt, m);
    EXPECT_EQ(s.candidate_ids.size(), m - 1);
    for (const auto& id : s.candidate_ids) EXPECT_NE(id, gt);
  }
  EXPECT_GT(branch_present, 0);
  EXPECT_GT(branch_absent, 0);
}

}  // namespace
}  // namespace skyrank
