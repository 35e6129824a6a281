// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "skyrank/eval.hpp"
#include "skyrank/labels.hpp"
#include "skyrank/synthgen.hpp"

namespace skyrank {
namespace {

namespace fs = std::filesystem;

WorldConfig small_config() {
  WorldConfig cfg;
  cfg.n_locations = 120;
  cfg.latent_dim = 8;
  cfg.d_e = 16;
  cfg.view_gap = 0.5;
  cfg.noise_sigma = 0.05;
  cfg.n_confusers_per_location = 1;
  cfg.confuser_sim_target = 0.95;
  cfg.train_fraction = 0.5;
  cfg.seed = 404;
  return cfg;
}

double retrieval_r1(const SynthWorld& world, const std::vector<std::string>& ids) {
  std::vector<RankedQuery> results;
  for (const Embedding& q : world.queries) {
    if (std::find(ids.begin(), ids.end(), q.id) == ids.end()) continue;
    RetrievalResult r = retrieve_top_m(world.gallery, q, 1);
    results.push_back({q.id, r.ids(), world.gt_of(q.id)});
  }
  return evaluate_run(results, {1}).recall_at.at(1);
}

TEST(GenerateWorld, DegenerateWorldRetrievesPerfectly) {
  WorldConfig cfg = small_config();
  cfg.view_gap = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.n_confusers_per_location = 0;
  SynthWorld world = generate_world(cfg);
  EXPECT_DOUBLE_EQ(retrieval_r1(world, world.train_ids), 100.0);
  EXPECT_DOUBLE_EQ(retrieval_r1(world, world.test_ids), 100.0);
}

TEST(GenerateWorld, GtMapAndSplitsAreConsistent) {
  SynthWorld world = generate_world(small_config());
  std::set<std::string> mapped;
  for (const auto& [q, r] : world.gt_map) {
    EXPECT_TRUE(mapped.insert(q).second);
    EXPECT_TRUE(world.gallery.contains(r));
  }
  EXPECT_EQ(mapped.size(), world.queries.size());
  for (const Embedding& q : world.queries) EXPECT_TRUE(mapped.count(q.id));

  std::set<std::string> train(world.train_ids.begin(), world.train_ids.end());
  std::set<std::string> test(world.test_ids.begin(), world.test_ids.end());
  EXPECT_EQ(train.size() + test.size(), world.queries.size());
  for (const std::string& id : train) EXPECT_FALSE(test.count(id));
}

TEST(GenerateWorld, ConfuserSimilarityHitsTarget) {
  WorldConfig cfg = small_config();
  cfg.n_locations = 400;
  cfg.n_confusers_per_location = 3;  // 1200 confusers
  SynthWorld world = generate_world(cfg);
  double total = 0.0;
  int count = 0;
  for (const Embedding& e : world.gallery.entries()) {
    const auto pos = e.id.find("_conf");
    if (pos == std::string::npos) continue;
    const Embedding& ref = world.gallery.by_id(e.id.substr(0, pos) + "_ref");
    total += cosine_similarity(e, ref);
    ++count;
  }
  ASSERT_GE(count, 1000);
  EXPECT_NEAR(total / count, cfg.confuser_sim_target, 0.02);
}

TEST(GenerateWorld, SameSeedGivesByteIdenticalFiles) {
  const fs::path dir1 = fs::temp_directory_path() / "skyrank_world_a";
  const fs::path dir2 = fs::temp_directory_path() / "skyrank_world_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  WorldConfig cfg = small_config();
  emit_world(generate_world(cfg), dir1);
  emit_world(generate_world(cfg), dir2);
  for (const char* name : {"gallery.jsonl", "queries.jsonl", "gt_map.json", "split.json"}) {
    EXPECT_EQ(read_file(dir1 / name), read_file(dir2 / name)) << name;
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(GenerateWorld, EmittedWorldRoundTrips) {
  const fs::path dir = fs::temp_directory_path() / "skyrank_world_rt";
  fs::remove_all(dir);
  SynthWorld world = generate_world(small_config());
  WorldPaths paths = emit_world(world, dir);

  Gallery gallery = load_gallery(paths.gallery);
  EXPECT_EQ(gallery.size(), world.gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    EXPECT_EQ(gallery.at(i).id, world.gallery.at(i).id);
    EXPECT_EQ(gallery.at(i).vec, world.gallery.at(i).vec);  // exact doubles
  }
  std::vector<Embedding> queries = load_queries(paths.queries);
  EXPECT_EQ(queries.size(), world.queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    EXPECT_EQ(queries[i].vec, world.queries[i].vec);
  }
  auto gt = load_gt_map(paths.gt_map);
  EXPECT_EQ(gt, world.gt_map);
  Split split = load_split(paths.split);
  EXPECT_EQ(split.train, world.train_ids);
  EXPECT_EQ(split.test, world.test_ids);
  fs::remove_all(dir);
}

// Confusers of the GT land above the threshold; unrelated references get 0.
TEST(GenerateWorld, SoftLabelsSeparateConfusersFromUnrelated) {
  WorldConfig cfg = small_config();
  cfg.noise_sigma = 0.01;
  cfg.n_confusers_per_location = 2;
  cfg.confuser_sim_target = 0.95;
  SynthWorld world = generate_world(cfg);

  int confusers_positive = 0, confusers_total = 0;
  int unrelated_zero = 0, unrelated_total = 0;
  for (int loc = 0; loc < 20; ++loc) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "loc%05d", loc);
    const std::string base(buf);
    const Embedding& gt = world.gallery.by_id(base + "_ref");
    std::vector<const Embedding*> cands{&gt,
                                        &world.gallery.by_id(base + "_conf0"),
                                        &world.gallery.by_id(base + "_conf1")};
    // an unrelated reference from another location
    char buf2[32];
    std::snprintf(buf2, sizeof(buf2), "loc%05d", (loc + 50) % cfg.n_locations);
    cands.push_back(&world.gallery.by_id(std::string(buf2) + "_ref"));

    SoftLabelVector labels = compute_soft_labels(cands, gt, 0.9, LabelMode::Soft);
    EXPECT_DOUBLE_EQ(labels.labels[0], 1.0);
    for (int c = 1; c <= 2; ++c) {
      ++confusers_total;
      if (labels.labels[static_cast<std::size_t>(c)] > 0.9) ++confusers_positive;
    }
    ++unrelated_total;
    if (labels.labels[3] == 0.0) ++unrelated_zero;
  }
  EXPECT_EQ(confusers_positive, confusers_total);
  EXPECT_EQ(unrelated_zero, unrelated_total);
}

// Seeded statistical check: a larger cross-view gap degrades retrieval R@1
// on average over seeds.
TEST(GenerateWorld, ViewGapDegradesRetrieval) {
  const std::vector<double> gaps{0.1, 0.6, 1.2};
  std::vector<double> means;
  for (double gap : gaps) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      WorldConfig cfg = small_config();
      cfg.n_locations = 150;
      cfg.view_gap = gap;
      cfg.n_confusers_per_location = 0;
      cfg.seed = seed;
      SynthWorld world = generate_world(cfg);
      std::vector<std::string> all_ids;
      for (const Embedding& q : world.queries) all_ids.push_back(q.id);
      total += retrieval_r1(world, all_ids);
    }
    means.push_back(total / 5.0);
  }
  EXPECT_GT(means[0], means[1]);
  EXPECT_GT(means[1], means[2]);
}

TEST(WorldConfig, Validation) {
  WorldConfig cfg = small_config();
  cfg.latent_dim = 99;  // > d_e
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.confuser_sim_target = 1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.train_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.view_gap = -0.1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

}  // namespace
}  // namespace skyrank
