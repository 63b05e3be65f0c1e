#include "wkd/checkpoint.hpp"

#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "wkd/error.hpp"

namespace wkd {

namespace {

constexpr std::string_view kTnsMagic = "TNSv1";

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string render_double(double d) {
  std::ostringstream s;
  s.precision(17);
  s << d;
  return s.str();
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key,
                           const std::filesystem::path& source) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError(source.string() + ": missing key '" + key + "'");
  return it->second;
}

long long to_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest key '" + key + "': not an integer: '" + s + "'");
  }
}

double to_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest key '" + key + "': not a number: '" + s + "'");
  }
}

std::uint64_t to_u64(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("manifest key '" + key + "': not an unsigned integer: '" + s + "'");
  }
}

}  // namespace

void write_tensor(const Matrix& m, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(kTnsMagic.size() + 12 + 4 * static_cast<std::size_t>(m.size()));
  buf.append(kTnsMagic);
  detail::put_u32(buf, 2);
  detail::put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(buf, static_cast<float>(m.data()[i]));
  detail::write_file_atomic(path, buf);
}

Matrix read_tensor(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  const std::string_view view(bytes);
  if (view.substr(0, kTnsMagic.size()) != kTnsMagic) throw DataError(path.string() + ": bad magic, not a TNSv1 file");
  if (bytes.size() < 9) throw DataError(path.string() + ": truncated header");
  const std::uint32_t rank = detail::get_u32(bytes, 5);
  if (rank < 1 || rank > 2) throw DataError(path.string() + ": unsupported tensor rank " + std::to_string(rank));
  const std::size_t header = 9 + 4 * rank;
  if (bytes.size() < header) throw DataError(path.string() + ": truncated header");
  std::size_t rows = 1;
  std::size_t cols = detail::get_u32(bytes, 9);
  if (rank == 2) {
    rows = cols;
    cols = detail::get_u32(bytes, 13);
  }
  const std::size_t expected = header + 4 * rows * cols;
  if (bytes.size() != expected) {
    throw DataError(path.string() + ": payload size mismatch, expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(bytes.size()));
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const float f = detail::get_f32(bytes, header + 4 * i);
    if (!std::isfinite(f)) throw DataError(path.string() + ": non-finite entry at flat index " + std::to_string(i));
    m.data()[i] = f;
  }
  return m;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#' || line[first] == ';' || line[first] == '[') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void save_checkpoint(const TopicModel& model, const CheckpointMeta& meta, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  const auto& cfg = model.config();
  std::ostringstream m;
  m << "format=wkd-checkpoint-1\n"
    << "architecture=" << architecture_name(cfg.architecture) << '\n'
    << "K=" << cfg.num_topics << '\n'
    << "V=" << cfg.vocab_size << '\n'
    << "ctx_dim=" << cfg.ctx_dim << '\n'
    << "hidden_sizes=" << join_ints(cfg.hidden_sizes) << '\n'
    << "ctx_adapter=" << (cfg.ctx_adapter ? 1 : 0) << '\n'
    << "dropout=" << render_double(cfg.dropout) << '\n'
    << "prior_alpha=" << render_double(cfg.prior_alpha) << '\n'
    << "decoder_norm=" << (cfg.decoder_norm ? 1 : 0) << '\n'
    << "norm_momentum=" << render_double(cfg.norm_momentum) << '\n'
    << "norm_eps=" << render_double(cfg.norm_eps) << '\n'
    << "seed=" << meta.seed << '\n'
    << "config_hash=" << cfg.hash() << '\n'
    << "vocab_fingerprint=" << meta.vocab_fingerprint << '\n'
    << "model_tag=" << meta.model_tag << '\n';
  for (const auto& [k, v] : meta.extra) m << "meta." << k << '=' << v << '\n';

  for (const auto& [name, tensor] : model.named_tensors()) write_tensor(*tensor, dir / (name + ".tns"));
  detail::write_file_atomic(dir / "manifest.txt", m.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  if (!std::filesystem::exists(manifest_path)) throw DataError("no checkpoint manifest at " + manifest_path.string());
  const auto kv = parse_key_values(detail::read_file(manifest_path), manifest_path.string());

  if (require(kv, "format", manifest_path) != "wkd-checkpoint-1") {
    throw DataError(manifest_path.string() + ": unsupported checkpoint format");
  }
  ModelConfig cfg;
  cfg.architecture = parse_architecture(require(kv, "architecture", manifest_path));
  cfg.num_topics = static_cast<int>(to_int(require(kv, "K", manifest_path), "K"));
  cfg.vocab_size = static_cast<int>(to_int(require(kv, "V", manifest_path), "V"));
  cfg.ctx_dim = static_cast<int>(to_int(require(kv, "ctx_dim", manifest_path), "ctx_dim"));
  cfg.hidden_sizes.clear();
  {
    std::istringstream hs(require(kv, "hidden_sizes", manifest_path));
    std::string tok;
    while (std::getline(hs, tok, ',')) cfg.hidden_sizes.push_back(static_cast<int>(to_int(tok, "hidden_sizes")));
  }
  cfg.ctx_adapter = to_int(require(kv, "ctx_adapter", manifest_path), "ctx_adapter") != 0;
  cfg.dropout = to_double(require(kv, "dropout", manifest_path), "dropout");
  cfg.prior_alpha = to_double(require(kv, "prior_alpha", manifest_path), "prior_alpha");
  cfg.decoder_norm = to_int(require(kv, "decoder_norm", manifest_path), "decoder_norm") != 0;
  cfg.norm_momentum = to_double(require(kv, "norm_momentum", manifest_path), "norm_momentum");
  cfg.norm_eps = to_double(require(kv, "norm_eps", manifest_path), "norm_eps");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (to_u64(require(kv, "config_hash", manifest_path), "config_hash") != cfg.hash()) {
    throw DataError(manifest_path.string() + ": config_hash does not match the recorded configuration");
  }

  Checkpoint ck{TopicModel::zeros(cfg), {}};
  ck.meta.seed = to_u64(require(kv, "seed", manifest_path), "seed");
  ck.meta.vocab_fingerprint = to_u64(require(kv, "vocab_fingerprint", manifest_path), "vocab_fingerprint");
  ck.meta.model_tag = require(kv, "model_tag", manifest_path);
  for (const auto& [k, v] : kv) {
    if (k.rfind("meta.", 0) == 0) ck.meta.extra[k.substr(5)] = v;
  }

  std::vector<std::string> names;
  for (const auto& [name, _] : ck.model.named_tensors()) names.push_back(name);
  for (const auto& name : names) ck.model.load_tensor(name, read_tensor(dir / (name + ".tns")));
  return ck;
}

}  // namespace wkd
