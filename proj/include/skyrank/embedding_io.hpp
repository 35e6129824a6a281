// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skyrank/gallery.hpp"
#include "skyrank/util.hpp"

namespace skyrank {

inline constexpr const char* kGalleryFormat = "skyrank-gallery";
inline constexpr int kGalleryVersion = 1;

// JSON Lines embedding file. First line is the header
// {"format":"skyrank-gallery","version":1,"dim":<int>}; each following line
// is {"id":...,"view":"query"|"reference","vec":[...]}. Numbers are decimal
// and parse back to the identical IEEE-754 double.
inline std::string embeddings_to_jsonl(const std::vector<Embedding>& entries,
                                       std::size_t dim) {
  nlohmann::ordered_json header;
  header["format"] = kGalleryFormat;
  header["version"] = kGalleryVersion;
  header["dim"] = dim;
  std::ostringstream out;
  out << header.dump() << "\n";
  for (const Embedding& e : entries) {
    validate_embedding(e, dim);
    nlohmann::ordered_json row;
    row["id"] = e.id;
    row["view"] = view_name(e.view);
    row["vec"] = e.vec;
    out << row.dump() << "\n";
  }
  return out.str();
}

inline void write_embeddings(const std::filesystem::path& path,
                             const std::vector<Embedding>& entries,
                             std::size_t dim) {
  atomic_write_file(path, embeddings_to_jsonl(entries, dim));
}

struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<Embedding> entries;
};

inline EmbeddingFile parse_embeddings_jsonl(const std::string& content,
                                            const std::string& origin) {
  EmbeddingFile file;
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw DataError(origin + ": empty file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad header: " + e.what());
  }
  if (header.value("format", "") != kGalleryFormat) {
    throw DataError(origin + ": not a " + std::string(kGalleryFormat) + " file");
  }
  if (header.value("version", 0) != kGalleryVersion) {
    throw DataError(origin + ": unsupported version");
  }
  if (!header.contains("dim") || !header["dim"].is_number_unsigned() ||
      header["dim"].get<std::size_t>() == 0) {
    throw DataError(origin + ": header missing positive dim");
  }
  file.dim = header["dim"].get<std::size_t>();

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
    Embedding e;
    try {
      e.id = row.at("id").get<std::string>();
      e.view = view_from_name(row.at("view").get<std::string>());
      e.vec = row.at("vec").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    validate_embedding(e, file.dim);
    file.entries.push_back(std::move(e));
  }
  if (file.entries.empty()) throw DataError(origin + ": no embeddings");
  return file;
}

inline EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  return parse_embeddings_jsonl(read_file(path), path.string());
}

inline Gallery load_gallery(const std::filesystem::path& path) {
  return build_gallery(read_embeddings(path).entries);
}

// Loads a query-view embedding file; rejects reference-view rows.
inline std::vector<Embedding> load_queries(const std::filesystem::path& path) {
  EmbeddingFile file = read_embeddings(path);
  for (const Embedding& e : file.entries) {
    if (e.view != View::Query) {
      throw DataError(path.string() + ": entry \"" + e.id + "\" is not query-view");
    }
  }
  return std::move(file.entries);
}

}  // namespace skyrank
