#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "iclad/core.hpp"
#include "iclad/embedding.hpp"

namespace iclad {

/// dot(a,b) / (|a| |b|), accumulated in double. Throws dim_mismatch or
/// zero_vector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Euclidean distance, accumulated in double.
double euclidean_distance(std::span<const float> a, std::span<const float> b);

struct Neighbor {
  std::size_t row = 0;
  double similarity = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Exact top-k by cosine similarity, descending, ties by ascending row.
std::vector<Neighbor> knn_search(const EmbeddingMatrix& index,
                                 std::span<const float> query, std::size_t k);

/// Same ordering as knn_search restricted to `candidates`.
std::vector<Neighbor> knn_search_subset(const EmbeddingMatrix& index,
                                        std::span<const float> query,
                                        std::span<const std::size_t> candidates,
                                        std::size_t k);

enum class RetrievalMode { cosine_topk, mmr };

/// Order in which class-balanced results are presented.
enum class BalancedOrder {
  interleave_real_first,
  interleave_fake_first,
  grouped_real_then_fake,
};

struct RetrievalConfig {
  std::size_t k_total = 10;
  std::size_t per_class = 5;
  RetrievalMode mode = RetrievalMode::cosine_topk;
  double mmr_lambda = 0.5;
  BalancedOrder order = BalancedOrder::interleave_real_first;
  /// Take whatever a short class has instead of failing.
  bool allow_unbalanced = false;

  void validate() const;
};

std::string_view to_string(RetrievalMode mode);
std::optional<RetrievalMode> parse_retrieval_mode(std::string_view text);

/// Top `cfg.per_class` rows of each class by cosine similarity, merged in
/// `cfg.order`. `labels[i]` is the label of row i.
std::vector<std::size_t> balanced_retrieve(const EmbeddingMatrix& index,
                                           std::span<const Label> labels,
                                           std::span<const float> query,
                                           const RetrievalConfig& cfg);

/// Greedy maximal marginal relevance. Each step picks the unselected row
/// maximizing lambda * audio_sim(row, query) - (1 - lambda) * max_s text_sim(row, s)
/// over already selected s; the first pick maximizes audio_sim alone. Ties go
/// to the lower row.
std::vector<std::size_t> mmr_select(const EmbeddingMatrix& audio_index,
                                    const EmbeddingMatrix& text_index,
                                    std::span<const float> query, std::size_t k,
                                    double lambda);

}  // namespace iclad
