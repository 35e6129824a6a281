// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "skyrank/common.hpp"

namespace skyrank {

enum class View { Query, Reference };

inline const char* view_name(View v) {
  return v == View::Query ? "query" : "reference";
}

inline View view_from_name(const std::string& name) {
  if (name == "query") return View::Query;
  if (name == "reference") return View::Reference;
  throw DataError("unknown view: \"" + name + "\"");
}

// A view-tagged feature vector with a stable identifier; the unit of
// retrieval and of label computation.
struct Embedding {
  std::string id;
  std::vector<double> vec;
  View view = View::Reference;
};

inline void validate_embedding(const Embedding& e, std::size_t expected_dim = 0) {
  if (e.id.empty()) throw ValidationError("embedding id must be non-empty");
  if (e.vec.empty()) throw ValidationError("embedding \"" + e.id + "\" has empty vector");
  if (expected_dim != 0 && e.vec.size() != expected_dim) {
    throw ValidationError("embedding \"" + e.id + "\" has dimension " +
                          std::to_string(e.vec.size()) + ", expected " +
                          std::to_string(expected_dim));
  }
  for (double x : e.vec) {
    if (!std::isfinite(x)) {
      throw NumericError("embedding \"" + e.id + "\" contains a non-finite entry");
    }
  }
}

inline double squared_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// Returns v / ||v||. Direction preserved; zero vectors have no direction.
inline std::vector<double> l2_normalize(const std::vector<double>& v) {
  const double n2 = squared_norm(v);
  if (n2 == 0.0) throw NumericError("cannot normalize a zero vector");
  if (!std::isfinite(n2)) throw NumericError("cannot normalize a non-finite vector");
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return out;
}

// u.v / (||u|| ||v||), in [-1, 1] up to rounding.
inline double cosine_similarity(const std::vector<double>& u,
                                const std::vector<double>& v) {
  if (u.size() != v.size()) {
    throw ValidationError("cosine_similarity: dimension mismatch (" +
                          std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    throw NumericError("cosine_similarity: zero vector has no direction");
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline double cosine_similarity(const Embedding& a, const Embedding& b) {
  return cosine_similarity(a.vec, b.vec);
}

}  // namespace skyrank
