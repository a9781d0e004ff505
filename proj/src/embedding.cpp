#include "iclad/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <string>

#include "iclad/error.hpp"

namespace iclad {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* field) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::malformed, std::string("embedding file truncated at ") + field);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t dim, std::size_t rows,
                                 std::vector<float> data, bool normalized)
    : dim_(dim), rows_(rows), data_(std::move(data)), normalized_(normalized) {
  if (dim_ == 0) throw Error(ErrorCode::invalid_argument, "embedding dim must be positive");
  if (data_.size() != dim_ * rows_) {
    throw Error(ErrorCode::dim_mismatch,
                "embedding data has " + std::to_string(data_.size()) +
                    " values, expected " + std::to_string(dim_ * rows_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(ErrorCode::malformed,
                  "non-finite value in embedding row " + std::to_string(i / dim_));
    }
  }
  if (normalized_) {
    for (std::size_t r = 0; r < rows_; ++r) {
      if (std::abs(l2_norm(row(r)) - 1.0) > kNormTolerance) {
        throw Error(ErrorCode::invalid_argument,
                    "row " + std::to_string(r) + " is flagged normalized but is not unit length");
      }
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) throw Error(ErrorCode::empty_input, "no embedding rows");
  const std::size_t dim = rows.front().size();
  std::vector<float> data;
  data.reserve(dim * rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dim) {
      throw Error(ErrorCode::dim_mismatch,
                  "row " + std::to_string(r) + " has dim " + std::to_string(rows[r].size()) +
                      ", expected " + std::to_string(dim));
    }
    data.insert(data.end(), rows[r].begin(), rows[r].end());
  }
  return EmbeddingMatrix(dim, rows.size(), std::move(data));
}

std::span<const float> EmbeddingMatrix::row(std::size_t i) const {
  if (i >= rows_) {
    throw Error(ErrorCode::invalid_argument,
                "row " + std::to_string(i) + " out of range (" + std::to_string(rows_) + " rows)");
  }
  return std::span<const float>(data_).subspan(i * dim_, dim_);
}

EmbeddingMatrix EmbeddingMatrix::normalized_copy() const {
  if (normalized_) return *this;
  std::vector<float> out(data_.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    auto src = row(r);
    const double norm = l2_norm(src);
    if (norm == 0.0) {
      throw Error(ErrorCode::zero_vector, "cannot normalize zero row " + std::to_string(r));
    }
    for (std::size_t j = 0; j < dim_; ++j) {
      out[r * dim_ + j] = static_cast<float>(src[j] / norm);
    }
  }
  return EmbeddingMatrix(dim_, rows_, std::move(out), true);
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * dim_);
  for (auto i : indices) {
    auto src = row(i);
    out.insert(out.end(), src.begin(), src.end());
  }
  return EmbeddingMatrix(dim_, indices.size(), std::move(out), normalized_);
}

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

std::vector<float> l2_normalized(std::span<const float> v) {
  const double norm = l2_norm(v);
  if (norm == 0.0) throw Error(ErrorCode::zero_vector, "cannot normalize a zero vector");
  std::vector<float> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = static_cast<float>(v[j] / norm);
  return out;
}

void write_embeddings(std::ostream& out, const EmbeddingMatrix& m) {
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  put_le<std::uint32_t>(out, kEmbeddingFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  for (float x : m.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
}

EmbeddingMatrix read_embeddings(std::istream& in) {
  char magic[sizeof(kEmbeddingMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::malformed, "not an ICLADEMB embedding file");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kEmbeddingFormatVersion) {
    throw Error(ErrorCode::malformed,
                "unsupported embedding format version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint32_t>(in, "dim");
  const auto rows = get_le<std::uint64_t>(in, "rows");
  if (dim == 0) throw Error(ErrorCode::malformed, "embedding file declares dim 0");
  // Guard against absurd headers before allocating.
  if (rows > (std::uint64_t{1} << 40) / dim) {
    throw Error(ErrorCode::malformed, "embedding file declares an implausible row count");
  }
  std::vector<float> data(static_cast<std::size_t>(rows) * dim);
  for (auto& x : data) x = std::bit_cast<float>(get_le<std::uint32_t>(in, "data"));
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::malformed, "trailing bytes after embedding data");
  }
  return EmbeddingMatrix(dim, static_cast<std::size_t>(rows), std::move(data));
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  write_embeddings(out, m);
  if (!out) throw Error(ErrorCode::io, "write failure on " + path.string());
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return read_embeddings(in);
}

}  // namespace iclad
