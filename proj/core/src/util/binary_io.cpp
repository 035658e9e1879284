#include "expanse/util/binary_io.hpp"

#include "expanse/error.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

namespace expanse {

std::vector<float> decode_f32_le(std::span<const unsigned char> bytes) {
  if (bytes.size() % 4 != 0) fail(ErrorCode::io, "float32 payload length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                         static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                         static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                         static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::vector<unsigned char> encode_f32_le(std::span<const float> values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    out[4 * i] = static_cast<unsigned char>(bits & 0xFF);
    out[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    out[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    out[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
  }
  return out;
}

std::vector<unsigned char> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<float> read_f32_file(const std::filesystem::path& path) {
  return decode_f32_le(read_binary_file(path));
}

void write_f32_file(const std::filesystem::path& path, std::span<const float> values) {
  write_file_atomic(path, encode_f32_le(values));
}

void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id() << '.' << counter.fetch_add(1);
  auto tmp = path;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::io, "cannot rename into " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const unsigned char>(
                              reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace expanse
