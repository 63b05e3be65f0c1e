#include "wkd/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "wkd/error.hpp"

namespace wkd {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::train:
      return "train";
    case Partition::validation:
      return "val";
    case Partition::test:
      return "test";
  }
  return "train";
}

Partition parse_partition(std::string_view token) {
  const std::string t = lower(token);
  if (t == "train") return Partition::train;
  if (t == "val" || t == "validation") return Partition::validation;
  if (t == "test") return Partition::test;
  throw DataError("unknown partition '" + std::string(token) + "'");
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {}

std::size_t Corpus::count(Partition p) const {
  return static_cast<std::size_t>(
      std::count_if(docs_.begin(), docs_.end(), [p](const Document& d) { return d.partition == p; }));
}

std::vector<std::string> preprocess(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (c < 0x80 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Corpus parse_tsv(std::string_view contents) {
  std::vector<Document> docs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= contents.size()) {
    auto nl = contents.find('\n', start);
    std::string_view line =
        nl == std::string_view::npos ? contents.substr(start) : contents.substr(start, nl - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (!is_blank(line)) {
      auto fields = split_tabs(line);
      if (fields.size() < 2 || fields.size() > 3) {
        throw DataError("line " + std::to_string(line_no) + ": expected 2 or 3 tab-separated fields, got " +
                        std::to_string(fields.size()));
      }
      Document doc;
      doc.id = docs.size();
      doc.tokens = preprocess(fields[0]);
      if (doc.tokens.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": document has no tokens after preprocessing");
      }
      try {
        doc.partition = parse_partition(fields[1]);
      } catch (const DataError& e) {
        throw DataError("line " + std::to_string(line_no) + ": " + e.what());
      }
      if (fields.size() == 3 && !fields[2].empty()) doc.label = std::string(fields[2]);
      docs.push_back(std::move(doc));
    }

    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (docs.empty()) throw DataError("empty corpus");
  return Corpus(std::move(docs));
}

Corpus load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_tsv(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw ConfigError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

std::size_t Vocabulary::find(std::string_view w) const {
  auto it = index_.find(w);
  return it == index_.end() ? npos : it->second;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& w : words_) {
    for (unsigned char c : w) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t size) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  if (size == 0) throw ConfigError("build_vocab: size must be >= 1");

  std::map<std::string, std::size_t, std::less<>> freq;
  for (const auto& doc : corpus) {
    if (doc.partition != Partition::train) continue;
    for (const auto& t : doc.tokens) ++freq[t];
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map iteration is already lexicographic, so a stable sort by count
  // keeps ties in ascending word order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > size) ranked.resize(size);

  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, _] : ranked) words.push_back(std::move(w));
  return Vocabulary(std::move(words));
}

void write_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& w : vocab.words()) out << w << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

Vocabulary read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  if (words.empty()) throw DataError("empty vocabulary file " + path.string());
  try {
    return Vocabulary(std::move(words));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

double BowVector::total() const {
  double s = 0.0;
  for (double c : counts) s += c;
  return s;
}

BowVector bow_vectorize(const Document& doc, const Vocabulary& vocab, bool normalize) {
  BowVector bow;
  bow.counts.assign(vocab.size(), 0.0);
  std::size_t in_vocab = 0;
  for (const auto& t : doc.tokens) {
    auto i = vocab.find(t);
    if (i == Vocabulary::npos) continue;
    bow.counts[i] += 1.0;
    ++in_vocab;
  }
  if (normalize) {
    bow.normalized = true;
    if (in_vocab > 0) {
      const double inv = 1.0 / static_cast<double>(in_vocab);
      for (double& c : bow.counts) c *= inv;
    }
  }
  return bow;
}

std::vector<std::uint32_t> token_ids(const Document& doc, const Vocabulary& vocab) {
  std::vector<std::uint32_t> ids;
  ids.reserve(doc.tokens.size());
  for (const auto& t : doc.tokens) {
    auto i = vocab.find(t);
    if (i != Vocabulary::npos) ids.push_back(static_cast<std::uint32_t>(i));
  }
  return ids;
}

}  // namespace wkd
