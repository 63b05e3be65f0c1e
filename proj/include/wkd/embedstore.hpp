#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wkd/corpus.hpp"

namespace wkd {

/// Row-major n_docs x dim matrix of 32-bit floats. Row i belongs to the i-th
/// document of the corpus it was produced from.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t n_docs, std::size_t dim);
  /// Throws ShapeError if data.size() != n_docs * dim.
  EmbeddingMatrix(std::size_t n_docs, std::size_t dim, std::vector<float> data);

  std::size_t n_docs() const { return n_docs_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  const std::vector<float>& data() const { return data_; }

  float operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

  /// Throws NumericError naming the first non-finite entry.
  void validate() const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t n_docs_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

// EMBv1: "EMBv1" | u32 n_docs | u32 dim | n_docs*dim f32, all little-endian.
inline constexpr std::size_t kEmbHeaderBytes = 13;

EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

/// Deterministic stand-in for a sentence encoder: every token hashes (with
/// the seed) to a pseudo-random unit vector; a document is the L2-normalised
/// sum over its token multiset.
EmbeddingMatrix synth_embeddings(const Corpus& corpus, std::size_t dim, std::uint64_t seed);

}  // namespace wkd
