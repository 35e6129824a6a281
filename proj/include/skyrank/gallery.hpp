// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "skyrank/embedding.hpp"

namespace skyrank {

// Immutable pool of reference-view embeddings with stable iteration order.
// Unlimited concurrent readers once built.
class Gallery {
 public:
  Gallery() = default;  // empty until built via build_gallery

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Embedding>& entries() const { return entries_; }
  const Embedding& at(std::size_t pos) const { return entries_[pos]; }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  std::size_t position_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown gallery id: \"" + id + "\"");
    return it->second;
  }

  const Embedding& by_id(const std::string& id) const {
    return entries_[position_of(id)];
  }

  friend Gallery build_gallery(std::vector<Embedding> entries);

 private:
  std::size_t dim_ = 0;
  std::vector<Embedding> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Constructs the reference pool. Entries must be non-empty, reference-view,
// uniform dimension, unique ids. Iteration order equals input order.
inline Gallery build_gallery(std::vector<Embedding> entries) {
  if (entries.empty()) throw ValidationError("gallery must be non-empty");
  Gallery g;
  g.dim_ = entries.front().vec.size();
  g.index_.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Embedding& e = entries[i];
    validate_embedding(e, g.dim_);
    if (e.view != View::Reference) {
      throw ValidationError("gallery entry \"" + e.id + "\" is not reference-view");
    }
    if (!g.index_.emplace(e.id, i).second) {
      throw ValidationError("duplicate gallery id: \"" + e.id + "\"");
    }
  }
  g.entries_ = std::move(entries);
  return g;
}

// Ranked candidates for one query, descending by similarity.
struct RetrievalResult {
  std::string query_id;
  std::vector<std::pair<std::string, double>> ranked;  // (candidate_id, similarity)

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(ranked.size());
    for (const auto& [id, sim] : ranked) out.push_back(id);
    return out;
  }
};

// Exhaustive top-m scan by cosine similarity. Ties break by ascending
// gallery position so the ranking is deterministic.
inline RetrievalResult retrieve_top_m(const Gallery& gallery,
                                      const Embedding& query, std::size_t m) {
  if (m == 0) throw ValidationError("retrieve_top_m: m must be positive");
  if (m > gallery.size()) {
    throw ValidationError("retrieve_top_m: m=" + std::to_string(m) +
                          " exceeds gallery size " + std::to_string(gallery.size()));
  }
  if (query.vec.size() != gallery.dim()) {
    throw ValidationError("retrieve_top_m: query dimension " +
                          std::to_string(query.vec.size()) + " != gallery dim " +
                          std::to_string(gallery.dim()));
  }

  std::vector<double> sims(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    sims[i] = cosine_similarity(query.vec, gallery.at(i).vec);
  }

  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m),
                    order.end(), better);

  RetrievalResult result;
  result.query_id = query.id;
  result.ranked.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    result.ranked.emplace_back(gallery.at(order[i]).id, sims[order[i]]);
  }
  return result;
}

}  // namespace skyrank
