#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "iclad/core.hpp"
#include "iclad/embedding.hpp"

namespace iclad {

inline constexpr std::string_view kCacheEmbeddingsFile = "embeddings.icladbin";
inline constexpr std::string_view kCacheMetadataFile = "cache.jsonl";

/// The Phase-1 exemplar store: one metadata entry per embedding row.
class OfflineCache {
 public:
  OfflineCache() = default;
  /// Validates row correspondence, id uniqueness and evidence completeness.
  OfflineCache(std::vector<CacheEntry> entries, EmbeddingMatrix embeddings);

  const std::vector<CacheEntry>& entries() const { return entries_; }
  const EmbeddingMatrix& embeddings() const { return embeddings_; }
  std::size_t size() const { return entries_.size(); }

  /// Label of each embedding row.
  std::vector<Label> row_labels() const;
  const CacheEntry& entry_for_row(std::size_t row) const;

 private:
  std::vector<CacheEntry> entries_;
  EmbeddingMatrix embeddings_;
  std::vector<std::size_t> entry_of_row_;
};

void write_cache(const std::filesystem::path& dir, const OfflineCache& cache);
OfflineCache read_cache(const std::filesystem::path& dir);

}  // namespace iclad
