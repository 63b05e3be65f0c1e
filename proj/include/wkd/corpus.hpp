#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace wkd {

enum class Partition { train, validation, test };

std::string_view partition_name(Partition p);

/// Parses `train`, `val`, `validation` or `test`, case-insensitively.
Partition parse_partition(std::string_view token);

struct Document {
  std::size_t id = 0;
  std::vector<std::string> tokens;
  Partition partition = Partition::train;
  std::optional<std::string> label;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  const std::vector<Document>& documents() const { return docs_; }
  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

  std::size_t count(Partition p) const;

 private:
  std::vector<Document> docs_;
};

/// Lowercases, replaces every non-alphanumeric byte with a space and splits
/// on whitespace. Bytes >= 0x80 are treated as non-alphanumeric.
std::vector<std::string> preprocess(std::string_view text);

/// Reads `text<TAB>partition[<TAB>label]` lines. Blank lines are skipped;
/// `\r\n` endings are accepted. Throws DataError with the line number on
/// malformed input and "empty corpus" when no document is found.
Corpus load_tsv(const std::filesystem::path& path);

/// Same as load_tsv but parses an in-memory buffer.
Corpus parse_tsv(std::string_view contents);

class Vocabulary {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Vocabulary() = default;
  /// Throws ConfigError on duplicate words.
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(std::size_t i) const { return words_[i]; }
  /// Position of `w`, or npos.
  std::size_t find(std::string_view w) const;
  bool contains(std::string_view w) const { return find(w) != npos; }

  /// FNV-1a over the newline-joined word list; identifies a vocabulary in
  /// checkpoint manifests.
  std::uint64_t fingerprint() const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

/// The `size` most frequent train-partition words by term frequency, ties
/// broken lexicographically ascending.
Vocabulary build_vocab(const Corpus& corpus, std::size_t size);

void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary read_vocab(const std::filesystem::path& path);

struct BowVector {
  std::vector<double> counts;
  bool normalized = false;

  double total() const;
};

BowVector bow_vectorize(const Document& doc, const Vocabulary& vocab, bool normalize);

/// Vocabulary ids of the in-vocabulary tokens of `doc`, in order.
std::vector<std::uint32_t> token_ids(const Document& doc, const Vocabulary& vocab);

}  // namespace wkd
