#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace expanse {

// Little-endian float32 arrays, the on-disk format for vocabulary and
// embedding-cache vectors.
std::vector<float> read_f32_file(const std::filesystem::path& path);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);

std::vector<float> decode_f32_le(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_f32_le(std::span<const float> values);

std::string read_text_file(const std::filesystem::path& path);
std::vector<unsigned char> read_binary_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over the target, so readers never
/// observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace expanse
