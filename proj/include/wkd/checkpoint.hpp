#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "wkd/topicvae.hpp"

namespace wkd {

// TNSv1: "TNSv1" | u32 rank | rank x u32 dims | prod(dims) f32, little-endian,
// row-major.

/// Writes `m` as a rank-2 tensor (rows, cols).
void write_tensor(const Matrix& m, const std::filesystem::path& path);
/// Reads a rank-1 (as 1 x n) or rank-2 tensor. Throws DataError on bad magic,
/// size mismatch or non-finite entries.
Matrix read_tensor(const std::filesystem::path& path);

struct CheckpointMeta {
  std::string model_tag;  ///< "T", "S", "SKD", ...
  std::uint64_t seed = 0;
  std::uint64_t vocab_fingerprint = 0;
  /// Free-form provenance (dataset, alpha, temperature, ...).
  std::map<std::string, std::string> extra;
};

struct Checkpoint {
  TopicModel model;
  CheckpointMeta meta;
};

/// A checkpoint is a directory holding `manifest.txt` (key=value lines) and
/// one `<tensor name>.tns` file per persistent tensor. Tensors are stored as
/// 32-bit floats.
void save_checkpoint(const TopicModel& model, const CheckpointMeta& meta, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Parses `key=value` lines; blank lines and lines starting with '#' are
/// ignored. Throws DataError on a line without '='.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);

}  // namespace wkd
