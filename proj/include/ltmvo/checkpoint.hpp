#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ltmvo/nn.hpp"

namespace ltmvo::checkpoint {

/// Little-endian primitive encoding shared by the checkpoint and feature
/// cache formats.
void put_u32(std::ostream& os, uint32_t v);
void put_f32(std::ostream& os, float v);
uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);

/// One tensor record: rank (u32), extents (u32 each), payload (f32 each).
void write_tensor_record(std::ostream& os, const std::vector<int>& shape,
                         const std::vector<float>& values);
std::pair<std::vector<int>, std::vector<float>> read_tensor_record(std::istream& is);

inline constexpr char kCheckpointMagic[] = "LTMVO1";

/// Checkpoint: magic bytes, then per-parameter records in registry order
/// (name length u32, name bytes, rank, extents, f32 payload). Round trips
/// bit-exactly.
void save_params(const std::string& path, const nn::ParamSet<float>& params);

/// Loads records into the given ParamSet; every stored name must exist with
/// a matching shape, and every parameter must be covered.
void load_params(const std::string& path, nn::ParamSet<float>& params);

/// SHA-256 of a file's contents (32 bytes), used to bind feature caches to
/// the checkpoint that produced them.
std::array<uint8_t, 32> sha256_file(const std::string& path);
std::array<uint8_t, 32> sha256_bytes(const uint8_t* data, size_t len);
std::string hex(const std::array<uint8_t, 32>& digest);

}  // namespace ltmvo::checkpoint
