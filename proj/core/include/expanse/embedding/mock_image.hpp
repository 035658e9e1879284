#pragma once

#include "expanse/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace expanse {

// Mock images are binary PPM (P6) bitmaps whose pixel bytes carry the image's
// synthetic embedding as little-endian float32, tagged by a header comment.
// The synthetic scorer reads the embedding straight back out, so the whole
// pipeline runs without model weights.

std::vector<unsigned char> encode_mock_image(const Vector& embedding);

/// Returns the embedded vector, or nullopt when the bytes are not a mock image.
std::optional<Vector> decode_mock_image(std::span<const unsigned char> bytes);

}  // namespace expanse
