// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skyrank/embedding_io.hpp"
#include "skyrank/gallery.hpp"
#include "skyrank/util.hpp"

namespace skyrank {

inline constexpr const char* kManifestFormat = "skyrank-manifest";
inline constexpr int kManifestVersion = 1;

// One curated ranking record: a query, exactly m-1 ground-truth-free
// candidates in retrieval order, and the ground-truth reference id.
struct RankSample {
  std::string query_id;
  std::string gt_id;
  std::vector<std::string> candidate_ids;   // length m-1, retrieval order
  std::vector<double> candidate_sims;       // retriever similarity to the query

  bool operator==(const RankSample&) const = default;
};

struct RankDataset {
  std::vector<RankSample> samples;
  std::size_t m = 0;
  std::string gallery_sha256;

  bool operator==(const RankDataset&) const = default;
};

inline void validate_sample(const RankSample& s, std::size_t m) {
  if (s.candidate_ids.size() != m - 1) {
    throw DataError("sample \"" + s.query_id + "\": expected " +
                    std::to_string(m - 1) + " candidates, got " +
                    std::to_string(s.candidate_ids.size()));
  }
  if (s.candidate_sims.size() != s.candidate_ids.size()) {
    throw DataError("sample \"" + s.query_id + "\": sims/candidates length mismatch");
  }
  std::set<std::string> seen;
  for (const std::string& id : s.candidate_ids) {
    if (id == s.gt_id) {
      throw DataError("sample \"" + s.query_id + "\": ground truth among candidates");
    }
    if (!seen.insert(id).second) {
      throw DataError("sample \"" + s.query_id + "\": duplicate candidate \"" + id + "\"");
    }
  }
  for (std::size_t i = 1; i < s.candidate_sims.size(); ++i) {
    if (s.candidate_sims[i] > s.candidate_sims[i - 1]) {
      throw DataError("sample \"" + s.query_id + "\": similarities not non-increasing");
    }
  }
}

inline void validate_dataset(const RankDataset& d) {
  if (d.m < 2) throw DataError("dataset m must be at least 2");
  for (const RankSample& s : d.samples) validate_sample(s, d.m);
}

// The ground-truth handling rule: if the GT was retrieved, drop it; else
// drop the m-th (least similar) candidate. Either way exactly m-1 survive.
inline std::vector<std::string> curate_candidates(const RetrievalResult& retrieved,
                                                  const std::string& gt_id,
                                                  std::size_t m) {
  if (m < 2) throw ValidationError("curate_candidates: m must be at least 2");
  if (retrieved.ranked.size() != m) {
    throw ValidationError("curate_candidates: expected " + std::to_string(m) +
                          " retrieved candidates, got " +
                          std::to_string(retrieved.ranked.size()));
  }
  std::vector<std::string> out;
  out.reserve(m - 1);
  bool gt_found = false;
  for (const auto& [id, sim] : retrieved.ranked) {
    if (id == gt_id) {
      gt_found = true;
      continue;
    }
    out.push_back(id);
  }
  if (!gt_found) out.pop_back();  // drop the least similar candidate
  return out;
}

inline RankSample build_rank_sample(const Embedding& query, const Gallery& gallery,
                                    const std::string& gt_id, std::size_t m) {
  if (!gallery.contains(gt_id)) {
    throw DataError("ground truth \"" + gt_id + "\" not in gallery (query \"" +
                    query.id + "\")");
  }
  RetrievalResult retrieved = retrieve_top_m(gallery, query, m);

  RankSample sample;
  sample.query_id = query.id;
  sample.gt_id = gt_id;
  sample.candidate_ids = curate_candidates(retrieved, gt_id, m);

  sample.candidate_sims.reserve(sample.candidate_ids.size());
  std::size_t pos = 0;
  for (const std::string& id : sample.candidate_ids) {
    while (retrieved.ranked[pos].first != id) ++pos;
    sample.candidate_sims.push_back(retrieved.ranked[pos].second);
    ++pos;
  }
  return sample;
}

// Manifest (bit-exact JSON Lines): header
// {"format":"skyrank-manifest","version":1,"m":<int>,"gallery_sha256":<hex>}
// then {"query":...,"gt":...,"cands":[...],"sims":[...]} per sample.
inline std::string manifest_to_jsonl(const RankDataset& dataset) {
  validate_dataset(dataset);
  nlohmann::ordered_json header;
  header["format"] = kManifestFormat;
  header["version"] = kManifestVersion;
  header["m"] = dataset.m;
  header["gallery_sha256"] = dataset.gallery_sha256;
  std::ostringstream out;
  out << header.dump() << "\n";
  for (const RankSample& s : dataset.samples) {
    nlohmann::ordered_json row;
    row["query"] = s.query_id;
    row["gt"] = s.gt_id;
    row["cands"] = s.candidate_ids;
    row["sims"] = s.candidate_sims;
    out << row.dump() << "\n";
  }
  return out.str();
}

inline void write_manifest(const RankDataset& dataset,
                           const std::filesystem::path& path) {
  atomic_write_file(path, manifest_to_jsonl(dataset));
}

// Rejects invariant violations outright; no repair on read.
inline RankDataset parse_manifest_jsonl(const std::string& content,
                                        const std::string& origin) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad header: " + e.what());
  }
  if (header.value("format", "") != kManifestFormat) {
    throw DataError(origin + ": not a " + std::string(kManifestFormat) + " file");
  }
  if (header.value("version", 0) != kManifestVersion) {
    throw DataError(origin + ": unsupported version");
  }

  RankDataset dataset;
  if (!header.contains("m") || !header["m"].is_number_unsigned()) {
    throw DataError(origin + ": header missing m");
  }
  dataset.m = header["m"].get<std::size_t>();
  dataset.gallery_sha256 = header.value("gallery_sha256", "");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
    RankSample s;
    try {
      s.query_id = row.at("query").get<std::string>();
      s.gt_id = row.at("gt").get<std::string>();
      s.candidate_ids = row.at("cands").get<std::vector<std::string>>();
      s.candidate_sims = row.at("sims").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    validate_sample(s, dataset.m);
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

inline RankDataset read_manifest(const std::filesystem::path& path) {
  return parse_manifest_jsonl(read_file(path), path.string());
}

// Checks that every id a dataset mentions resolves in the gallery.
inline void check_dataset_against_gallery(const RankDataset& dataset,
                                          const Gallery& gallery) {
  for (const RankSample& s : dataset.samples) {
    if (!gallery.contains(s.gt_id)) {
      throw DataError("manifest gt \"" + s.gt_id + "\" not in gallery");
    }
    for (const std::string& id : s.candidate_ids) {
      if (!gallery.contains(id)) {
        throw DataError("manifest candidate \"" + id + "\" not in gallery");
      }
    }
  }
}

}  // namespace skyrank
