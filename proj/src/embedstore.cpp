#include "wkd/embedstore.hpp"

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>

#include "binary_io.hpp"
#include "wkd/error.hpp"
#include "wkd/nn/rng.hpp"

namespace wkd {

namespace {

constexpr std::string_view kEmbMagic = "EMBv1";

std::vector<double> unit_vector(std::uint64_t seed, std::string_view purpose, std::uint64_t index,
                                std::size_t dim) {
  nn::Rng rng(seed, purpose, index);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t n_docs, std::size_t dim)
    : n_docs_(n_docs), dim_(dim), data_(n_docs * dim, 0.0f) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t n_docs, std::size_t dim, std::vector<float> data)
    : n_docs_(n_docs), dim_(dim), data_(std::move(data)) {
  if (data_.size() != n_docs_ * dim_) {
    throw ShapeError("embedding data has " + std::to_string(data_.size()) + " entries, expected " +
                     std::to_string(n_docs_ * dim_));
  }
}

void EmbeddingMatrix::validate() const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw NumericError("non-finite embedding entry at row " + std::to_string(k / dim_) + ", column " +
                         std::to_string(k % dim_));
    }
  }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < kEmbMagic.size() || std::string_view(bytes).substr(0, kEmbMagic.size()) != kEmbMagic) {
    throw DataError(path.string() + ": bad magic, not an EMBv1 file");
  }
  if (bytes.size() < kEmbHeaderBytes) {
    throw DataError(path.string() + ": truncated header, expected " + std::to_string(kEmbHeaderBytes) +
                    " bytes, got " + std::to_string(bytes.size()));
  }
  const std::size_t n_docs = detail::get_u32(bytes, 5);
  const std::size_t dim = detail::get_u32(bytes, 9);
  const std::size_t expected = kEmbHeaderBytes + 4 * n_docs * dim;
  if (bytes.size() != expected) {
    throw DataError(path.string() + ": payload size mismatch, expected " + std::to_string(expected) +
                    " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<float> data(n_docs * dim);
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = detail::get_f32(bytes, kEmbHeaderBytes + 4 * k);

  EmbeddingMatrix m(n_docs, dim, std::move(data));
  try {
    m.validate();
  } catch (const NumericError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  matrix.validate();
  std::string buf;
  buf.reserve(kEmbHeaderBytes + 4 * matrix.data().size());
  buf.append(kEmbMagic);
  detail::put_u32(buf, static_cast<std::uint32_t>(matrix.n_docs()));
  detail::put_u32(buf, static_cast<std::uint32_t>(matrix.dim()));
  for (float f : matrix.data()) detail::put_f32(buf, f);
  detail::write_file_atomic(path, buf);
}

EmbeddingMatrix synth_embeddings(const Corpus& corpus, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("synth_embeddings: dim must be >= 1");
  EmbeddingMatrix out(corpus.size(), dim);
  std::unordered_map<std::string, std::vector<double>> cache;
  const auto empty_doc = unit_vector(seed, "synth-embedding-empty", 0, dim);

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    // Summing over the sorted multiset makes the row independent of token order.
    std::map<std::string_view, std::size_t> multiset;
    for (const auto& t : corpus[i].tokens) ++multiset[t];

    std::vector<double> acc(dim, 0.0);
    for (const auto& [token, count] : multiset) {
      auto it = cache.find(std::string(token));
      if (it == cache.end()) {
        it = cache.emplace(std::string(token), unit_vector(seed, "synth-embedding-token", nn::fnv1a(token), dim))
                 .first;
      }
      for (std::size_t j = 0; j < dim; ++j) acc[j] += static_cast<double>(count) * it->second[j];
    }
    double norm2 = 0.0;
    for (double x : acc) norm2 += x * x;
    const auto& src = norm2 > 0.0 ? acc : empty_doc;
    const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 1.0;
    auto row = out.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(src[j] * inv);
  }
  return out;
}

}  // namespace wkd
