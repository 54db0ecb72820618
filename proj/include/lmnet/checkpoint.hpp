#pragma once

// Binary model checkpoint:
//   magic "LMKN" | u16 version | u32 length + UTF-8 canonical config text |
//   u32 tensor count | per tensor: u32 length + name, u8 dtype (1 = f32,
//   2 = f64), 4 x u32 shape, raw little-endian payload.
// The table holds every parameter followed by the batch-norm running
// statistics. All integers are little-endian.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "lmnet/model.hpp"

namespace lmnet {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, UnsupportedVersion, Truncated, Malformed };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::string_view kModelMagic = "LMKN";
inline constexpr std::string_view kTrainingMagic = "LMKT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Config text stored in a checkpoint: the graph's canonical keys plus its
/// metadata keys.
template <typename T>
std::string checkpoint_config_text(const ModelGraph<T>& graph);

template <typename T>
std::string encode_model(const ModelGraph<T>& graph);

/// Decodes a complete model checkpoint image. Throws CheckpointError and
/// never returns a partially populated graph.
template <typename T>
ModelGraph<T> decode_model(std::string_view bytes);

template <typename T>
void save_checkpoint(const ModelGraph<T>& graph, const std::filesystem::path& path);

template <typename T>
ModelGraph<T> load_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
/// Writes via a sibling temporary file and rename.
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lmnet
