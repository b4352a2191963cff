#pragma once

#include <filesystem>
#include <string>

#include "ncp/tensor.hpp"

namespace ncp {

/// Binary (P5) PGM of n images laid out `columns` per row, 1 pixel gutter.
/// `images` is n x (height * width) with intensities in [0, 1] (clamped).
std::string encode_pgm_grid(const Tensor& images, std::size_t height, std::size_t width,
                            std::size_t columns);
void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t height,
                    std::size_t width, std::size_t columns);

}  // namespace ncp
