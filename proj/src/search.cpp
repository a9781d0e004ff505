#include "iclad/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace iclad {

namespace {

void check_dims(std::size_t expected, std::size_t actual, const char* what) {
  if (expected != actual) {
    throw Error(ErrorCode::dim_mismatch, std::string(what) + " has dim " +
                                             std::to_string(actual) + ", expected " +
                                             std::to_string(expected));
  }
}

bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.row < b.row;
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  check_dims(a.size(), b.size(), "vector");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::zero_vector, "cosine similarity of a zero vector");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  check_dims(a.size(), b.size(), "vector");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

std::vector<Neighbor> knn_search_subset(const EmbeddingMatrix& index,
                                        std::span<const float> query,
                                        std::span<const std::size_t> candidates,
                                        std::size_t k) {
  check_dims(index.dim(), query.size(), "query");
  if (k > candidates.size()) {
    throw Error(ErrorCode::k_too_large, "k=" + std::to_string(k) + " exceeds " +
                                            std::to_string(candidates.size()) +
                                            " searchable rows");
  }
  std::vector<Neighbor> scored;
  scored.reserve(candidates.size());
  for (auto row : candidates) {
    scored.push_back({row, cosine_similarity(index.row(row), query)});
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                    scored.end(), ranks_before);
  scored.resize(k);
  return scored;
}

std::vector<Neighbor> knn_search(const EmbeddingMatrix& index,
                                 std::span<const float> query, std::size_t k) {
  std::vector<std::size_t> all(index.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return knn_search_subset(index, query, all, k);
}

void RetrievalConfig::validate() const {
  if (k_total == 0 || per_class == 0) {
    throw Error(ErrorCode::invalid_argument, "retrieval counts must be positive");
  }
  if (mode == RetrievalMode::cosine_topk && per_class * 2 != k_total) {
    throw Error(ErrorCode::invalid_argument,
                "class-balanced retrieval needs k_total = 2 * per_class (got k_total=" +
                    std::to_string(k_total) + ", per_class=" + std::to_string(per_class) + ")");
  }
  if (!(mmr_lambda >= 0.0 && mmr_lambda <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "mmr_lambda must lie in [0, 1]");
  }
}

std::string_view to_string(RetrievalMode mode) {
  return mode == RetrievalMode::cosine_topk ? "cosine_topk" : "mmr";
}

std::optional<RetrievalMode> parse_retrieval_mode(std::string_view text) {
  if (text == "cosine_topk") return RetrievalMode::cosine_topk;
  if (text == "mmr") return RetrievalMode::mmr;
  return std::nullopt;
}

std::vector<std::size_t> balanced_retrieve(const EmbeddingMatrix& index,
                                           std::span<const Label> labels,
                                           std::span<const float> query,
                                           const RetrievalConfig& cfg) {
  if (labels.size() != index.rows()) {
    throw Error(ErrorCode::length_mismatch, "labels and index rows differ in count");
  }
  if (cfg.per_class == 0) throw Error(ErrorCode::invalid_argument, "per_class must be positive");

  std::vector<std::size_t> by_class[2];
  for (std::size_t r = 0; r < labels.size(); ++r) {
    by_class[labels[r] == Label::real ? 0 : 1].push_back(r);
  }

  std::vector<std::size_t> picked[2];
  for (int c = 0; c < 2; ++c) {
    std::size_t take = cfg.per_class;
    if (by_class[c].size() < take) {
      if (!cfg.allow_unbalanced) {
        throw Error(ErrorCode::insufficient_class_members,
                    "insufficient class members: " +
                        std::string(to_string(c == 0 ? Label::real : Label::fake)) + " has " +
                        std::to_string(by_class[c].size()) + ", need " +
                        std::to_string(cfg.per_class));
      }
      take = by_class[c].size();
    }
    for (const auto& n : knn_search_subset(index, query, by_class[c], take)) {
      picked[c].push_back(n.row);
    }
  }

  std::vector<std::size_t> out;
  out.reserve(picked[0].size() + picked[1].size());
  if (cfg.order == BalancedOrder::grouped_real_then_fake) {
    out = picked[0];
    out.insert(out.end(), picked[1].begin(), picked[1].end());
    return out;
  }
  const int lead = cfg.order == BalancedOrder::interleave_real_first ? 0 : 1;
  const auto& first = picked[lead];
  const auto& second = picked[1 - lead];
  for (std::size_t i = 0; i < std::max(first.size(), second.size()); ++i) {
    if (i < first.size()) out.push_back(first[i]);
    if (i < second.size()) out.push_back(second[i]);
  }
  return out;
}

std::vector<std::size_t> mmr_select(const EmbeddingMatrix& audio_index,
                                    const EmbeddingMatrix& text_index,
                                    std::span<const float> query, std::size_t k,
                                    double lambda) {
  const std::size_t n = audio_index.rows();
  if (text_index.rows() != n) {
    throw Error(ErrorCode::length_mismatch, "audio and text indexes differ in row count");
  }
  check_dims(audio_index.dim(), query.size(), "query");
  if (k > n) {
    throw Error(ErrorCode::k_too_large,
                "k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " rows");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "lambda must lie in [0, 1]");
  }

  std::vector<double> relevance(n);
  for (std::size_t r = 0; r < n; ++r) {
    relevance[r] = cosine_similarity(audio_index.row(r), query);
  }
  // Running max text similarity to the selected set, refreshed per pick.
  std::vector<double> redundancy(n, -std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> selected;
  selected.reserve(k);

  while (selected.size() < k) {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n; ++r) {
      if (taken[r]) continue;
      const double score = selected.empty()
                               ? relevance[r]
                               : lambda * relevance[r] - (1.0 - lambda) * redundancy[r];
      if (best == n || score > best_score) {
        best = r;
        best_score = score;
      }
    }
    taken[best] = true;
    selected.push_back(best);
    auto chosen = text_index.row(best);
    for (std::size_t r = 0; r < n; ++r) {
      if (!taken[r]) {
        redundancy[r] = std::max(redundancy[r], cosine_similarity(text_index.row(r), chosen));
      }
    }
  }
  return selected;
}

}  // namespace iclad
