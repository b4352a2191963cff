#include "ncp/image.hpp"

#include <algorithm>
#include <cmath>

#include "ncp/checkpoint.hpp"
#include "ncp/error.hpp"

namespace ncp {

std::string encode_pgm_grid(const Tensor& images, std::size_t height, std::size_t width,
                            std::size_t columns) {
  if (height == 0 || width == 0 || columns == 0) throw ShapeError("pgm grid: empty layout");
  if (images.cols() != height * width) throw ShapeError("pgm grid: image size mismatch");
  const std::size_t n = images.rows();
  const std::size_t cols = std::min(columns, std::max<std::size_t>(n, 1));
  const std::size_t rows = std::max<std::size_t>((n + cols - 1) / cols, 1);
  const std::size_t W = cols * (width + 1) + 1;
  const std::size_t H = rows * (height + 1) + 1;
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + W * H, static_cast<char>(0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gy = (i / cols) * (height + 1) + 1;
    const std::size_t gx = (i % cols) * (width + 1) + 1;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double v = std::clamp(images.at(i, y * width + x), 0.0, 1.0);
        out[header + (gy + y) * W + gx + x] = static_cast<char>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t height,
                    std::size_t width, std::size_t columns) {
  write_file_bytes(path, encode_pgm_grid(images, height, width, columns));
}

}  // namespace ncp
