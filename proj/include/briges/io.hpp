#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "briges/pipeline.hpp"

namespace briges {

/// DMAP raster: "DMAP", u32 LE width, height, channels, then f32 LE
/// samples, row-major, channel-minor.
struct Dmap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 1;
  std::vector<float> data;

  float at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return data[(row * width + col) * channels + ch];
  }
};

inline constexpr std::size_t kDmapHeaderBytes = 16;

std::string encode_dmap(const Dmap& map);
// Parses one record from bytes [offset, offset + header + payload).
Dmap decode_dmap(const std::string& bytes, std::size_t offset = 0);

void write_dmap(const std::filesystem::path& path, const Dmap& map);
Dmap read_dmap(const std::filesystem::path& path);

// rows x cols matrix (or a raster of rows*cols pixels) as one channel.
Dmap to_dmap(const Tensor& t, std::size_t height, std::size_t width);

// Flat "key = value" settings; '#' starts a comment.
struct Settings {
  ModelConfig model;
  OptimConfig optim;
  std::size_t steps = 500;
  std::size_t batch_size = 4;
};

Settings parse_settings(const std::string& text);
Settings load_settings(const std::filesystem::path& path);
std::string format_settings(const Settings& s);

/// Text manifest, then concatenated DMAP records. Each parameter is stored
/// as a 2-channel record (float value, float residual) so doubles survive
/// the round trip to ~1e-14 relative.
///
///   BRIGES-CKPT 1
///   <settings lines>
///   frozen_digest <sha256 hex>
///   payload_sha256 <sha256 hex>
///   record <name> <offset> <height> <width> <channels>
///   ...
///   end
struct Checkpoint {
  Settings settings;
  std::string frozen_digest;
  GateSet gates;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds the frozen model from the stored settings; throws IoError if its
// digest differs from the recorded one.
StubModel model_from_checkpoint(const Checkpoint& ckpt);

std::string sha256_hex(const std::string& bytes);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace briges
