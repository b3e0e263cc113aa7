#include "symdiff/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "symdiff/error.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {
namespace {

struct PgmCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ParseError(start, std::string("PGM ") + what + " too large");
      ++pos;
    }
    if (pos == start) throw ParseError(start, std::string("PGM: expected ") + what);
    return v;
  }
};

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* s = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (s->bytes.size() - s->pos < n) png_error(png, "truncated PNG");
  std::memcpy(out, s->bytes.data() + s->pos, n);
  s->pos += n;
}

void png_write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_callback(png_structp) {}

[[noreturn]] void png_error_callback(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = msg;
  png_longjmp(png, 1);
}

void png_warning_callback(png_structp, png_const_charp) {}

}  // namespace

void RgbImage::set(int row, int col, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (row < 0 || col < 0 || row >= height || col >= width) return;
  const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 3;
  pixels[i] = r;
  pixels[i + 1] = g;
  pixels[i + 2] = b;
}

void RgbImage::fill_rect(int row, int col, int rows, int cols, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (int y = row; y < row + rows; ++y)
    for (int x = col; x < col + cols; ++x) set(y, x, r, g, b);
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) throw ParseError(0, "not a PGM file");
  const bool binary = bytes[1] == '5';
  PgmCursor in{bytes, 2};
  const long width = in.number("width");
  const long height = in.number("height");
  const long maxval = in.number("maxval");
  if (width < 1 || height < 1) throw ParseError(in.pos, "PGM image is empty");
  if (maxval < 1 || maxval > 65535) throw ParseError(in.pos, "PGM maxval out of range");
  GrayImage img(static_cast<int>(width), static_cast<int>(height));
  const std::size_t count = img.pixels.size();
  if (binary) {
    ++in.pos;  // single whitespace after maxval
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    if (in.pos > bytes.size() || bytes.size() - in.pos < count * bpp) throw ParseError(in.pos, "truncated PGM raster");
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t p = in.pos + i * bpp;
      const unsigned v = bpp == 2 ? (static_cast<unsigned>(bytes[p]) << 8) | bytes[p + 1] : bytes[p];
      img.pixels[i] = static_cast<double>(std::min<long>(v, maxval)) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i)
      img.pixels[i] = static_cast<double>(std::min(in.number("pixel"), maxval)) / static_cast<double>(maxval);
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : image.pixels) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ParseError(0, "not a PNG file");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_callback, png_warning_callback);
  if (!png) throw Error(ErrorKind::kIo, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  PngReadState state{bytes, 0};
  GrayImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(state.pos, "bad PNG: " + error);
  }
  png_set_read_fn(png, &state, png_read_callback);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info);
  const auto h = png_get_image_height(png, info);
  const auto channels = png_get_channels(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  raster.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img = GrayImage(static_cast<int>(w), static_cast<int>(h));
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) img.at(static_cast<int>(y), static_cast<int>(x)) = rows[y][x * channels] / 255.0;
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.width < 1 || image.height < 1) throw Error(ErrorKind::kInvalidArgument, "cannot encode an empty image");
  std::string error;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_callback, png_warning_callback);
  if (!png) throw Error(ErrorKind::kIo, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::kIo, "PNG encoding failed: " + error);
  }
  png_set_write_fn(png, &out, png_write_callback, png_flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

GrayImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  return decode_pgm(bytes);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) { write_binary_file(path, encode_png(image)); }

}  // namespace symdiff
