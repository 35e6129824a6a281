// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "skyrank/embedding_io.hpp"
#include "skyrank/gallery.hpp"
#include "skyrank/rng.hpp"
#include "skyrank/util.hpp"

namespace skyrank {

// Seeded paired-view world: per location one reference-view embedding, one
// query-view embedding produced through a distorted map (the cross-view
// gap), plus optional near-duplicate references ("confusers") at a target
// cosine similarity to the true reference.
struct WorldConfig {
  int n_locations = 1000;
  int latent_dim = 16;
  int d_e = 32;
  double view_gap = 0.6;        // angle of the cross-view linear distortion
  double noise_sigma = 0.05;
  int n_confusers_per_location = 2;
  double confuser_sim_target = 0.95;
  double train_fraction = 2.0 / 3.0;
  std::uint64_t seed = 17;

  void validate() const {
    if (n_locations < 1) throw ValidationError("world: n_locations must be >= 1");
    if (latent_dim < 1) throw ValidationError("world: latent_dim must be >= 1");
    if (d_e < latent_dim) throw ValidationError("world: latent_dim must be <= d_e");
    if (view_gap < 0.0) throw ValidationError("world: view_gap must be >= 0");
    if (noise_sigma < 0.0) throw ValidationError("world: noise_sigma must be >= 0");
    if (n_confusers_per_location < 0) {
      throw ValidationError("world: n_confusers_per_location must be >= 0");
    }
    if (!(confuser_sim_target > 0.0 && confuser_sim_target < 1.0)) {
      throw ValidationError("world: confuser_sim_target must be in (0, 1)");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ValidationError("world: train_fraction must be in (0, 1)");
    }
  }
};

inline void to_json(nlohmann::ordered_json& j, const WorldConfig& c) {
  j = nlohmann::ordered_json{{"n_locations", c.n_locations},
                             {"latent_dim", c.latent_dim},
                             {"d_e", c.d_e},
                             {"view_gap", c.view_gap},
                             {"noise_sigma", c.noise_sigma},
                             {"n_confusers_per_location", c.n_confusers_per_location},
                             {"confuser_sim_target", c.confuser_sim_target},
                             {"train_fraction", c.train_fraction},
                             {"seed", c.seed}};
}

template <class Json>
void world_config_from_json(const Json& j, WorldConfig& c) {
  c.n_locations = j.value("n_locations", c.n_locations);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.d_e = j.value("d_e", c.d_e);
  c.view_gap = j.value("view_gap", c.view_gap);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.n_confusers_per_location = j.value("n_confusers_per_location", c.n_confusers_per_location);
  c.confuser_sim_target = j.value("confuser_sim_target", c.confuser_sim_target);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.seed = j.value("seed", c.seed);
}

inline void from_json(const nlohmann::json& j, WorldConfig& c) { world_config_from_json(j, c); }
inline void from_json(const nlohmann::ordered_json& j, WorldConfig& c) { world_config_from_json(j, c); }

struct SynthWorld {
  Gallery gallery;
  std::vector<Embedding> queries;
  std::vector<std::pair<std::string, std::string>> gt_map;  // query -> reference
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  std::string gt_of(const std::string& query_id) const {
    for (const auto& [q, r] : gt_map)
      if (q == query_id) return r;
    throw DataError("no ground truth for query \"" + query_id + "\"");
  }
};

namespace detail {

inline std::vector<double> gaussian_vec(int n, double sd, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// y = cos(angle) * unit(x) + sin(angle) * unit(perp), rescaled to |x|.
// Exact target cosine against x up to rounding.
inline std::vector<double> rotate_towards_random(const std::vector<double>& x,
                                                 double cos_target, Rng& rng) {
  const std::vector<double> xhat = l2_normalize(x);
  std::vector<double> u = gaussian_vec(static_cast<int>(x.size()), 1.0, rng);
  double proj = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) proj += u[i] * xhat[i];
  for (std::size_t i = 0; i < u.size(); ++i) u[i] -= proj * xhat[i];
  const std::vector<double> uhat = l2_normalize(u);
  const double norm = std::sqrt(squared_norm(x));
  const double s = std::sqrt(std::max(0.0, 1.0 - cos_target * cos_target));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = norm * (cos_target * xhat[i] + s * uhat[i]);
  }
  return out;
}

}  // namespace detail

inline SynthWorld generate_world(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, fnv1a64("world"));
  const double map_sd = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));

  // Two cross-view maps: the query-view map is the reference-view map tilted
  // toward an independent random map by the view_gap angle.
  std::vector<std::vector<double>> map_ref(cfg.d_e), map_alt(cfg.d_e);
  for (int i = 0; i < cfg.d_e; ++i) {
    map_ref[i] = detail::gaussian_vec(cfg.latent_dim, map_sd, rng);
    map_alt[i] = detail::gaussian_vec(cfg.latent_dim, map_sd, rng);
  }
  const double cg = std::cos(cfg.view_gap), sg = std::sin(cfg.view_gap);

  auto project = [&](const std::vector<std::vector<double>>& m,
                     const std::vector<double>& z) {
    std::vector<double> out(cfg.d_e, 0.0);
    for (int i = 0; i < cfg.d_e; ++i) {
      double acc = 0.0;
      for (int j = 0; j < cfg.latent_dim; ++j) acc += m[i][j] * z[j];
      out[i] = acc;
    }
    return out;
  };

  SynthWorld world;
  std::vector<Embedding> refs;
  char id_buf[64];

  for (int loc = 0; loc < cfg.n_locations; ++loc) {
    std::vector<double> z = detail::gaussian_vec(cfg.latent_dim, 1.0, rng);

    std::snprintf(id_buf, sizeof(id_buf), "loc%05d", loc);
    const std::string base(id_buf);

    std::vector<double> ref_vec = project(map_ref, z);
    std::vector<double> query_vec(cfg.d_e);
    for (int i = 0; i < cfg.d_e; ++i) {
      double alt = 0.0;
      for (int j = 0; j < cfg.latent_dim; ++j) alt += map_alt[i][j] * z[j];
      query_vec[i] = cg * ref_vec[i] + sg * alt;
    }
    if (cfg.noise_sigma > 0.0) {
      std::vector<double> nr = detail::gaussian_vec(cfg.d_e, cfg.noise_sigma, rng);
      std::vector<double> nq = detail::gaussian_vec(cfg.d_e, cfg.noise_sigma, rng);
      for (int i = 0; i < cfg.d_e; ++i) {
        ref_vec[i] += nr[i];
        query_vec[i] += nq[i];
      }
    }

    refs.push_back({base + "_ref", ref_vec, View::Reference});
    world.queries.push_back({base + "_q", std::move(query_vec), View::Query});
    world.gt_map.emplace_back(base + "_q", base + "_ref");

    for (int c = 0; c < cfg.n_confusers_per_location; ++c) {
      std::vector<double> conf =
          detail::rotate_towards_random(ref_vec, cfg.confuser_sim_target, rng);
      refs.push_back({base + "_conf" + std::to_string(c), std::move(conf),
                      View::Reference});
    }
  }

  world.gallery = build_gallery(std::move(refs));

  std::vector<std::size_t> order(world.queries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = make_rng(cfg.seed, fnv1a64("split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(
      std::round(cfg.train_fraction * static_cast<double>(world.queries.size())));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& id = world.queries[order[i]].id;
    if (i < n_train) {
      world.train_ids.push_back(id);
    } else {
      world.test_ids.push_back(id);
    }
  }
  return world;
}

struct WorldPaths {
  std::filesystem::path gallery;
  std::filesystem::path queries;
  std::filesystem::path gt_map;
  std::filesystem::path split;
};

inline WorldPaths world_paths(const std::filesystem::path& out_dir) {
  return {out_dir / "gallery.jsonl", out_dir / "queries.jsonl",
          out_dir / "gt_map.json", out_dir / "split.json"};
}

// Writes gallery/query JSONL plus gt_map and split JSON; re-reading the
// files reproduces the world exactly.
inline WorldPaths emit_world(const SynthWorld& world,
                             const std::filesystem::path& out_dir) {
  WorldPaths paths = world_paths(out_dir);
  write_embeddings(paths.gallery, world.gallery.entries(), world.gallery.dim());
  write_embeddings(paths.queries, world.queries, world.gallery.dim());

  nlohmann::ordered_json gt;
  for (const auto& [q, r] : world.gt_map) gt[q] = r;
  atomic_write_file(paths.gt_map, gt.dump(2) + "\n");

  nlohmann::ordered_json split;
  split["train"] = world.train_ids;
  split["test"] = world.test_ids;
  atomic_write_file(paths.split, split.dump(2) + "\n");
  return paths;
}

inline std::vector<std::pair<std::string, std::string>> load_gt_map(
    const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<std::string>());
  if (out.empty()) throw DataError(path.string() + ": empty gt map");
  return out;
}

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

inline Split load_split(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Split s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

}  // namespace skyrank
