#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace iclad {

/// Dense row-major float32 matrix of embeddings.
///
/// Every entry is finite. When `normalized()` is true every row has unit L2
/// norm (within 1e-4); zero rows can never be normalized.
class EmbeddingMatrix {
 public:
  static constexpr double kNormTolerance = 1e-4;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t dim, std::size_t rows, std::vector<float> data,
                  bool normalized = false);

  static EmbeddingMatrix from_rows(const std::vector<std::vector<float>>& rows);

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return rows_; }
  bool normalized() const { return normalized_; }
  bool empty() const { return rows_ == 0; }

  std::span<const float> row(std::size_t i) const;
  std::span<const float> data() const { return data_; }

  /// Copy with every row scaled to unit norm. Throws zero_vector on a zero row.
  EmbeddingMatrix normalized_copy() const;
  /// Rows in the given order.
  EmbeddingMatrix select(std::span<const std::size_t> indices) const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t dim_ = 0;
  std::size_t rows_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
};

double l2_norm(std::span<const float> v);
std::vector<float> l2_normalized(std::span<const float> v);

// Binary cache layout (all little-endian):
//   "ICLADEMB" | u32 version=1 | u32 dim | u64 rows | rows*dim float32
inline constexpr char kEmbeddingMagic[8] = {'I', 'C', 'L', 'A', 'D', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

void write_embeddings(std::ostream& out, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(std::istream& in);
void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

}  // namespace iclad
