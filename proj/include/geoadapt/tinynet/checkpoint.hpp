#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "geoadapt/tinynet/mlp.hpp"

namespace geoadapt::tinynet {

/// Named MLP sections plus a free-text metadata block.
///
/// Byte layout (all integers and reals little-endian):
///
///   "GATN"                      4-byte magic
///   u8   version                (kCheckpointVersion)
///   u32  metadata length, then metadata bytes
///   u32  section count
///   per section:
///     u16 name length, name bytes
///     u32 layer count
///     per layer: u32 rows (out), u32 cols (in), u8 activation
///   payload: per section, per layer: weight row-major (rows*cols f32), bias (rows f32)
///
/// The header is complete before any parameter value, so shapes can be read
/// without touching the payload. Identical bytes mean an identical model.
struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Mlp>> sections;

  bool has(const std::string& name) const;
  const Mlp& section(const std::string& name) const;
  Mlp& section(const std::string& name);
  void set(const std::string& name, Mlp net);
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace geoadapt::tinynet
