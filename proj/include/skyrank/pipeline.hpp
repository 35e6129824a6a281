// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skyrank/checkpoint.hpp"
#include "skyrank/curation.hpp"
#include "skyrank/embedding_io.hpp"
#include "skyrank/eval.hpp"
#include "skyrank/rerank.hpp"
#include "skyrank/synthgen.hpp"
#include "skyrank/training.hpp"

namespace skyrank {

namespace fs = std::filesystem;

// Resolved run configuration: one JSON document with per-subcommand blocks.
// Paths left empty resolve to defaults under out_dir; sub-seeds left unset
// derive deterministically from the master seed.
struct RunConfig {
  std::uint64_t seed = 42;
  bool serial_deterministic = false;
  int threads = 0;  // 0 = hardware

  struct Paths {
    std::string out_dir = "runs/default";
    std::string gallery;
    std::string queries;
    std::string gt_map;
    std::string split;
    std::string manifest;
    std::string checkpoint;
    std::string rerank_run;
  } paths;

  WorldConfig world;
  bool world_seed_set = false;

  std::size_t curate_m = 20;
  std::string curate_split = "train";  // "train" | "test" | "all"

  ScorerConfig scorer;
  bool scorer_seed_set = false;

  TrainConfig train;
  bool train_seed_set = false;

  std::size_t m_retrieve = 20;
  std::size_t k_rerank = 10;
  std::string rerank_split = "test";

  std::vector<std::size_t> eval_ks = {1, 5, 10};

  int effective_threads() const { return serial_deterministic ? 1 : threads; }
};

inline void validate_split_name(const std::string& name) {
  if (name != "train" && name != "test" && name != "all") {
    throw ValidationError("unknown split \"" + name + "\" (want train|test|all)");
  }
}

template <class Json>
RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.serial_deterministic = j.value("serial_deterministic", c.serial_deterministic);
  c.threads = j.value("threads", c.threads);
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    c.paths.out_dir = p.value("out_dir", c.paths.out_dir);
    c.paths.gallery = p.value("gallery", std::string());
    c.paths.queries = p.value("queries", std::string());
    c.paths.gt_map = p.value("gt_map", std::string());
    c.paths.split = p.value("split", std::string());
    c.paths.manifest = p.value("manifest", std::string());
    c.paths.checkpoint = p.value("checkpoint", std::string());
    c.paths.rerank_run = p.value("rerank_run", std::string());
  }
  if (j.contains("world")) {
    world_config_from_json(j.at("world"), c.world);
    c.world_seed_set = j.at("world").contains("seed");
  }
  if (j.contains("curate")) {
    c.curate_m = j.at("curate").value("m", c.curate_m);
    c.curate_split = j.at("curate").value("split", c.curate_split);
  }
  if (j.contains("scorer")) {
    scorer_config_from_json(j.at("scorer"), c.scorer);
    c.scorer_seed_set = j.at("scorer").contains("seed");
  }
  if (j.contains("train")) {
    train_config_from_json(j.at("train"), c.train);
    c.train_seed_set = j.at("train").contains("seed");
  }
  if (j.contains("rerank")) {
    c.m_retrieve = j.at("rerank").value("m_retrieve", c.m_retrieve);
    c.k_rerank = j.at("rerank").value("k_rerank", c.k_rerank);
    c.rerank_split = j.at("rerank").value("split", c.rerank_split);
  }
  if (j.contains("eval") && j.at("eval").contains("ks")) {
    c.eval_ks = j.at("eval").at("ks").template get<std::vector<std::size_t>>();
  }
  return c;
}

// Fills derived seeds, default paths, and thread counts. Resolution is
// idempotent: resolving an already-resolved config changes nothing.
inline void resolve_run_config(RunConfig& c) {
  if (!c.world_seed_set) {
    c.world.seed = mix_seed(c.seed, fnv1a64("world"));
    c.world_seed_set = true;
  }
  if (!c.scorer_seed_set) {
    c.scorer.seed = mix_seed(c.seed, fnv1a64("scorer"));
    c.scorer_seed_set = true;
  }
  if (!c.train_seed_set) {
    c.train.seed = mix_seed(c.seed, fnv1a64("train"));
    c.train_seed_set = true;
  }
  const fs::path out(c.paths.out_dir);
  auto defaulted = [&](std::string& field, const char* name) {
    if (field.empty()) field = (out / name).string();
  };
  defaulted(c.paths.gallery, "gallery.jsonl");
  defaulted(c.paths.queries, "queries.jsonl");
  defaulted(c.paths.gt_map, "gt_map.json");
  defaulted(c.paths.split, "split.json");
  defaulted(c.paths.manifest, "manifest.jsonl");
  defaulted(c.paths.checkpoint, "checkpoint.bin");
  defaulted(c.paths.rerank_run, "rerank.jsonl");
  c.train.threads = c.effective_threads();
  validate_split_name(c.curate_split);
  validate_split_name(c.rerank_split);
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json world_j, scorer_j, train_j;
  to_json(world_j, c.world);
  to_json(scorer_j, c.scorer);
  to_json(train_j, c.train);
  return nlohmann::ordered_json{
      {"seed", c.seed},
      {"serial_deterministic", c.serial_deterministic},
      {"threads", c.threads},
      {"paths",
       {{"out_dir", c.paths.out_dir},
        {"gallery", c.paths.gallery},
        {"queries", c.paths.queries},
        {"gt_map", c.paths.gt_map},
        {"split", c.paths.split},
        {"manifest", c.paths.manifest},
        {"checkpoint", c.paths.checkpoint},
        {"rerank_run", c.paths.rerank_run}}},
      {"world", world_j},
      {"curate", {{"m", c.curate_m}, {"split", c.curate_split}}},
      {"scorer", scorer_j},
      {"train", train_j},
      {"rerank",
       {{"m_retrieve", c.m_retrieve},
        {"k_rerank", c.k_rerank},
        {"split", c.rerank_split}}},
      {"eval", {{"ks", c.eval_ks}}}};
}

// Accepts either a plain config document or a previously written
// run_<cmd>.json (unwraps its "config" block).
inline RunConfig load_run_config(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": bad config JSON: " + e.what());
  }
  if (j.contains("config") && j.contains("command")) j = j.at("config");
  try {
    return run_config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(origin + ": bad config JSON: " + e.what());
  }
}

namespace detail {

inline void write_run_record(const RunConfig& c, const std::string& command,
                             const std::vector<std::pair<std::string, std::string>>& inputs) {
  nlohmann::ordered_json rec;
  rec["command"] = command;
  rec["config"] = run_config_to_json(c);
  nlohmann::ordered_json in;
  for (const auto& [name, path] : inputs) {
    in[name] = nlohmann::ordered_json{{"path", path}, {"sha256", sha256_file(path)}};
  }
  rec["inputs"] = in;
  atomic_write_file(fs::path(c.paths.out_dir) / ("run_" + command + ".json"),
                    rec.dump(2) + "\n");
}

inline void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) {
    throw DataError(std::string(what) + " not found: " + path);
  }
}

inline std::vector<Embedding> queries_for_split(const RunConfig& c,
                                                const std::string& which) {
  std::vector<Embedding> queries = load_queries(c.paths.queries);
  if (which == "all") return queries;
  Split split = load_split(c.paths.split);
  const std::vector<std::string>& keep_ids =
      which == "train" ? split.train : split.test;
  std::set<std::string> keep(keep_ids.begin(), keep_ids.end());
  std::vector<Embedding> out;
  out.reserve(keep.size());
  for (auto& q : queries) {
    if (keep.count(q.id)) out.push_back(std::move(q));
  }
  if (out.empty()) throw DataError("split \"" + which + "\" selects no queries");
  return out;
}

inline std::string gt_for(const std::vector<std::pair<std::string, std::string>>& gt_map,
                          const std::string& query_id) {
  for (const auto& [q, r] : gt_map) {
    if (q == query_id) return r;
  }
  throw DataError("no ground truth for query \"" + query_id + "\"");
}

}  // namespace detail

inline void cmd_gen(const RunConfig& c) {
  SynthWorld world = generate_world(c.world);
  emit_world(world, c.paths.out_dir);
  detail::write_run_record(c, "gen", {});
}

inline void cmd_curate(const RunConfig& c) {
  detail::require_file(c.paths.gallery, "gallery");
  detail::require_file(c.paths.queries, "queries");
  detail::require_file(c.paths.gt_map, "gt map");

  Gallery gallery = load_gallery(c.paths.gallery);
  std::vector<Embedding> queries = detail::queries_for_split(c, c.curate_split);
  auto gt_map = load_gt_map(c.paths.gt_map);

  RankDataset dataset;
  dataset.m = c.curate_m;
  dataset.gallery_sha256 = sha256_file(c.paths.gallery);
  for (const Embedding& q : queries) {
    dataset.samples.push_back(
        build_rank_sample(q, gallery, detail::gt_for(gt_map, q.id), c.curate_m));
  }
  write_manifest(dataset, c.paths.manifest);

  std::vector<std::pair<std::string, std::string>> inputs = {
      {"gallery", c.paths.gallery},
      {"queries", c.paths.queries},
      {"gt_map", c.paths.gt_map}};
  if (c.curate_split != "all") inputs.emplace_back("split", c.paths.split);
  detail::write_run_record(c, "curate", inputs);
}

inline TrainReport cmd_train(const RunConfig& c) {
  detail::require_file(c.paths.manifest, "manifest");
  detail::require_file(c.paths.gallery, "gallery");
  detail::require_file(c.paths.queries, "queries");

  RankDataset dataset = read_manifest(c.paths.manifest);
  if (!dataset.gallery_sha256.empty() &&
      dataset.gallery_sha256 != sha256_file(c.paths.gallery)) {
    throw DataError("manifest was curated against a different gallery file");
  }
  Gallery gallery = load_gallery(c.paths.gallery);
  std::vector<Embedding> queries = load_queries(c.paths.queries);

  ScorerParams params = init_params(c.scorer);
  TrainReport report = train(dataset, gallery, queries, params, c.train);
  save_checkpoint(params, c.paths.checkpoint);

  const fs::path out(c.paths.out_dir);
  atomic_write_file(out / "train_report.json",
                    train_report_to_json(report).dump(2) + "\n");
  atomic_write_file(out / "losses.csv", losses_to_csv(report));
  detail::write_run_record(c, "train",
                           {{"manifest", c.paths.manifest},
                            {"gallery", c.paths.gallery},
                            {"queries", c.paths.queries}});
  return report;
}

inline std::string rerank_run_to_jsonl(const std::vector<QueryRerank>& runs) {
  std::ostringstream out;
  for (const QueryRerank& qr : runs) {
    nlohmann::ordered_json row;
    row["query"] = qr.result.query_id;
    row["original"] = qr.result.original_order;
    row["scores"] = qr.result.scores;
    row["reranked"] = qr.result.reranked_order;
    row["predicted"] = qr.result.predicted_id;
    row["retrieval"] = qr.retrieval_order;
    row["final"] = qr.final_ranking;
    out << row.dump() << "\n";
  }
  return out.str();
}

struct RerankRecord {
  std::string query_id;
  std::vector<std::string> retrieval;
  std::vector<std::string> final;
};

inline std::vector<RerankRecord> read_rerank_run(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<RerankRecord> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json row = nlohmann::json::parse(line);
      RerankRecord rec;
      rec.query_id = row.at("query").get<std::string>();
      rec.retrieval = row.at("retrieval").get<std::vector<std::string>>();
      rec.final = row.at("final").get<std::vector<std::string>>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no rerank records");
  return out;
}

inline std::vector<QueryRerank> cmd_rerank(const RunConfig& c) {
  detail::require_file(c.paths.gallery, "gallery");
  detail::require_file(c.paths.queries, "queries");
  detail::require_file(c.paths.checkpoint, "checkpoint");

  Gallery gallery = load_gallery(c.paths.gallery);
  std::vector<Embedding> queries = detail::queries_for_split(c, c.rerank_split);
  ScorerParams params = load_checkpoint(c.paths.checkpoint);

  std::vector<QueryRerank> runs = rerank_run(params, queries, gallery, c.m_retrieve,
                                             c.k_rerank, c.effective_threads());
  atomic_write_file(c.paths.rerank_run, rerank_run_to_jsonl(runs));

  std::vector<std::pair<std::string, std::string>> inputs = {
      {"gallery", c.paths.gallery},
      {"queries", c.paths.queries},
      {"checkpoint", c.paths.checkpoint}};
  if (c.rerank_split != "all") inputs.emplace_back("split", c.paths.split);
  detail::write_run_record(c, "rerank", inputs);
  return runs;
}

struct EvalPair {
  EvalReport baseline;  // raw retrieval ranking
  EvalReport reranked;  // spliced final ranking
};

inline std::string eval_delta_csv(const EvalPair& pair,
                                  const std::vector<std::size_t>& ks) {
  std::ostringstream out;
  out << "metric,baseline,reranked,delta\n";
  for (std::size_t K : ks) {
    const double b = pair.baseline.recall_at.at(K);
    const double r = pair.reranked.recall_at.at(K);
    out << "R@" << K << "," << format_fixed(b, 2) << "," << format_fixed(r, 2)
        << "," << format_fixed(r - b, 2) << "\n";
  }
  out << "AP," << format_fixed(pair.baseline.ap, 2) << ","
      << format_fixed(pair.reranked.ap, 2) << ","
      << format_fixed(pair.reranked.ap - pair.baseline.ap, 2) << "\n";
  return out.str();
}

// Evaluates raw retrieval and the reranked run side by side.
inline EvalPair cmd_eval(const RunConfig& c) {
  detail::require_file(c.paths.rerank_run, "rerank run");
  detail::require_file(c.paths.gt_map, "gt map");

  std::vector<RerankRecord> records = read_rerank_run(c.paths.rerank_run);
  auto gt_map = load_gt_map(c.paths.gt_map);

  std::vector<std::size_t> ks = c.eval_ks;
  for (std::size_t K : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
    if (std::find(ks.begin(), ks.end(), K) == ks.end()) ks.push_back(K);
  }
  std::sort(ks.begin(), ks.end());

  std::vector<RankedQuery> baseline, reranked;
  for (const RerankRecord& rec : records) {
    const std::string gt = detail::gt_for(gt_map, rec.query_id);
    baseline.push_back({rec.query_id, rec.retrieval, gt});
    reranked.push_back({rec.query_id, rec.final, gt});
  }

  EvalPair pair{evaluate_run(baseline, ks), evaluate_run(reranked, ks)};

  const fs::path out(c.paths.out_dir);
  atomic_write_file(out / "eval_baseline.json",
                    eval_report_to_json(pair.baseline).dump(2) + "\n");
  atomic_write_file(out / "eval_reranked.json",
                    eval_report_to_json(pair.reranked).dump(2) + "\n");
  atomic_write_file(out / "eval_summary.csv",
                    eval_summary_csv({{"baseline", pair.baseline},
                                      {"reranked", pair.reranked}}));
  atomic_write_file(out / "eval_delta.csv", eval_delta_csv(pair, c.eval_ks));
  atomic_write_file(out / "per_query_baseline.jsonl", per_query_jsonl(pair.baseline));
  atomic_write_file(out / "per_query_reranked.jsonl", per_query_jsonl(pair.reranked));

  detail::write_run_record(c, "eval",
                           {{"rerank_run", c.paths.rerank_run},
                            {"gt_map", c.paths.gt_map}});
  return pair;
}

struct SweepRow {
  double value = 0.0;
  std::string config_sha256;
  EvalPair metrics;
};

inline std::string format_sweep_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return std::string(buf);
}

// Repeats train/rerank/eval along one axis with the shared master seed.
// The k_rerank axis reuses a single checkpoint since training is
// independent of it.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& base, const std::string& axis,
                                       const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("sweep: no values given");
  if (axis != "T" && axis != "k_rerank" && axis != "k_train") {
    throw ValidationError("sweep: unknown axis \"" + axis + "\" (want T|k_rerank|k_train)");
  }

  const fs::path out(base.paths.out_dir);
  std::optional<std::string> shared_checkpoint;
  if (axis == "k_rerank") {
    RunConfig tc = base;
    tc.paths.out_dir = (out / "sweep_k_rerank" / "shared").string();
    tc.paths.checkpoint = (fs::path(tc.paths.out_dir) / "checkpoint.bin").string();
    fs::create_directories(tc.paths.out_dir);
    cmd_train(tc);
    shared_checkpoint = tc.paths.checkpoint;
  }

  std::vector<SweepRow> rows;
  for (double value : values) {
    RunConfig c = base;
    if (axis == "T") {
      c.train.T = value;
    } else if (axis == "k_train") {
      c.train.k = static_cast<int>(value);
    } else {
      c.k_rerank = static_cast<std::size_t>(value);
    }
    const fs::path run_dir = out / ("sweep_" + axis) / format_sweep_value(value);
    fs::create_directories(run_dir);
    c.paths.out_dir = run_dir.string();
    c.paths.checkpoint = shared_checkpoint
                             ? *shared_checkpoint
                             : (run_dir / "checkpoint.bin").string();
    c.paths.rerank_run = (run_dir / "rerank.jsonl").string();

    if (!shared_checkpoint) cmd_train(c);
    cmd_rerank(c);
    EvalPair pair = cmd_eval(c);

    SweepRow row;
    row.value = value;
    row.config_sha256 = sha256_hex(run_config_to_json(c).dump());
    row.metrics = pair;
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  csv << "axis,value,config_sha256,baseline_R@1,reranked_R@1,delta_R@1,"
         "baseline_AP,reranked_AP,delta_AP\n";
  for (const SweepRow& row : rows) {
    const double b1 = row.metrics.baseline.recall_at.at(1);
    const double r1 = row.metrics.reranked.recall_at.at(1);
    csv << axis << "," << format_sweep_value(row.value) << "," << row.config_sha256
        << "," << format_fixed(b1, 2) << "," << format_fixed(r1, 2) << ","
        << format_fixed(r1 - b1, 2) << "," << format_fixed(row.metrics.baseline.ap, 2)
        << "," << format_fixed(row.metrics.reranked.ap, 2) << ","
        << format_fixed(row.metrics.reranked.ap - row.metrics.baseline.ap, 2) << "\n";
  }
  atomic_write_file(out / ("sweep_" + axis + ".csv"), csv.str());
  detail::write_run_record(base, "sweep_" + axis, {});
  return rows;
}

}  // namespace skyrank
