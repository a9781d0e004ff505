#include "iclad/cache_store.hpp"

#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace iclad {

OfflineCache::OfflineCache(std::vector<CacheEntry> entries, EmbeddingMatrix embeddings)
    : entries_(std::move(entries)), embeddings_(std::move(embeddings)) {
  if (entries_.size() != embeddings_.rows()) {
    throw Error(ErrorCode::malformed,
                "cache has " + std::to_string(entries_.size()) + " metadata entries but " +
                    std::to_string(embeddings_.rows()) + " embedding rows");
  }
  entry_of_row_.assign(entries_.size(), entries_.size());
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (!ids.insert(e.audio.id).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate cache id \"" + e.audio.id + "\"");
    }
    if (!e.evidence.complete()) {
      throw Error(ErrorCode::missing_evidence,
                  "cache entry \"" + e.audio.id + "\" has incomplete evidence");
    }
    if (e.embedding_row >= embeddings_.rows() || entry_of_row_[e.embedding_row] != entries_.size()) {
      throw Error(ErrorCode::malformed,
                  "cache entry \"" + e.audio.id + "\" has an invalid embedding row");
    }
    entry_of_row_[e.embedding_row] = i;
  }
}

std::vector<Label> OfflineCache::row_labels() const {
  std::vector<Label> labels(embeddings_.rows());
  for (const auto& e : entries_) labels[e.embedding_row] = e.label;
  return labels;
}

const CacheEntry& OfflineCache::entry_for_row(std::size_t row) const {
  if (row >= entry_of_row_.size()) {
    throw Error(ErrorCode::invalid_argument, "no cache entry for row " + std::to_string(row));
  }
  return entries_[entry_of_row_[row]];
}

void write_cache(const std::filesystem::path& dir, const OfflineCache& cache) {
  std::filesystem::create_directories(dir);
  save_embeddings(dir / kCacheEmbeddingsFile, cache.embeddings());

  const auto meta_path = dir / kCacheMetadataFile;
  std::ofstream out(meta_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + meta_path.string());
  // Line i describes row i.
  for (std::size_t row = 0; row < cache.size(); ++row) {
    const auto& e = cache.entry_for_row(row);
    nlohmann::ordered_json j;
    j["id"] = e.audio.id;
    j["path"] = e.audio.path.string();
    j["label"] = to_string(e.label);
    j["dataset"] = e.audio.dataset;
    j["r_real"] = e.evidence.r_real;
    j["r_fake"] = e.evidence.r_fake;
    j["r_reconciled"] = e.evidence.r_reconciled;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failure on " + meta_path.string());
}

OfflineCache read_cache(const std::filesystem::path& dir) {
  auto embeddings = load_embeddings(dir / kCacheEmbeddingsFile);

  const auto meta_path = dir / kCacheMetadataFile;
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + meta_path.string());
  std::vector<CacheEntry> entries;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = meta_path.string() + ":" + std::to_string(line);
    CacheEntry e;
    try {
      auto j = nlohmann::json::parse(text);
      e.audio.id = j.at("id").get<std::string>();
      e.audio.path = j.at("path").get<std::string>();
      e.audio.dataset = j.value("dataset", std::string{});
      e.audio.split = Split::train;
      auto label = parse_label(j.at("label").get<std::string>());
      if (!label) throw Error(ErrorCode::malformed, where + ": invalid label");
      e.label = *label;
      e.evidence.r_real = j.at("r_real").get<std::string>();
      e.evidence.r_fake = j.at("r_fake").get<std::string>();
      e.evidence.r_reconciled = j.at("r_reconciled").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::malformed, where + ": " + ex.what());
    }
    e.embedding_row = entries.size();
    entries.push_back(std::move(e));
  }
  if (entries.size() != embeddings.rows()) {
    throw Error(ErrorCode::malformed,
                "row count mismatch: " + std::to_string(entries.size()) +
                    " metadata lines vs " + std::to_string(embeddings.rows()) +
                    " embedding rows");
  }
  return OfflineCache(std::move(entries), std::move(embeddings));
}

}  // namespace iclad
