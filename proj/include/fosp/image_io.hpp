#pragma once

#include "fosp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fosp {

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial files.
void write_png(const std::filesystem::path& path, const Image8& image);

// (1,C,H,W) tensor with values in [0,1].
Tensor to_tensor(const Image8& image);
// Sample `index` of an (N,C,H,W) tensor, C in {1,3}; value*255 rounded half to even, clamped.
Image8 to_image8(const Tensor& tensor, int index = 0);

// Binary mask (1,1,H,W) from an 8-bit gray image: pixel > 127 is smoke.
Tensor mask_from_image(const Image8& image);

}  // namespace fosp
