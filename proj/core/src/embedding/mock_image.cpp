#include "expanse/embedding/mock_image.hpp"

#include "expanse/util/binary_io.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace expanse {
namespace {

constexpr std::string_view kTag = "# expanse-mock-embedding d=";

}  // namespace

std::vector<unsigned char> encode_mock_image(const Vector& embedding) {
  std::vector<float> values(static_cast<std::size_t>(embedding.size()));
  for (Eigen::Index i = 0; i < embedding.size(); ++i) values[i] = static_cast<float>(embedding[i]);
  auto payload = encode_f32_le(values);

  const std::size_t pixels = (payload.size() + 2) / 3;
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(pixels))));
  payload.resize(side * side * 3, 0);

  std::string header = "P6\n" + std::string(kTag) + std::to_string(embedding.size()) + "\n" +
                       std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::optional<Vector> decode_mock_image(std::span<const unsigned char> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!text.starts_with("P6\n")) return std::nullopt;
  const auto tag_end = 3 + kTag.size();
  if (text.substr(3, kTag.size()) != kTag) return std::nullopt;

  // Header: magic, tag line, "W H", maxval; payload follows the fourth newline.
  std::size_t pos = 0;
  for (int lines = 0; lines < 4; ++lines) {
    pos = text.find('\n', pos);
    if (pos == std::string_view::npos) return std::nullopt;
    ++pos;
  }
  int dim = 0;
  try {
    dim = std::stoi(std::string(text.substr(tag_end, text.find('\n', tag_end) - tag_end)));
  } catch (...) {
    return std::nullopt;
  }
  const std::size_t need = static_cast<std::size_t>(dim) * 4;
  if (dim <= 0 || bytes.size() - pos < need) return std::nullopt;
  const auto values = decode_f32_le(bytes.subspan(pos, need));
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = values[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace expanse
