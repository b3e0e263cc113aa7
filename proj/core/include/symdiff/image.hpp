#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace symdiff {

// Row-major grayscale raster with values in [0, 1]; row 0 is the top.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double value = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), value) {}

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // RGB triples, row-major

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t value = 255)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, value) {}

  void set(int row, int col, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void fill_rect(int row, int col, int rows, int cols, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Binary or ASCII PGM (P5/P2), 8 or 16 bit.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
// Any PNG color type, converted to luminance.
GrayImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

// Chooses the decoder from the file signature.
GrayImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace symdiff
