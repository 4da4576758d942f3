// Copyright 2026 The safe-cf Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safe/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "safe/errors.hpp"
#include "safe/tensor_utils.hpp"

namespace safe {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Returns false on any libpng error. Kept free of non-trivial locals because
// libpng reports errors through longjmp.
bool encode_png(std::FILE* file, png_bytepp rows, png_uint_32 width, png_uint_32 height,
                int color_type) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, rows);
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ConfigError("read_png: channels must be 1 or 3");
  auto file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                   PNG_TRANSFORM_STRIP_ALPHA,
               nullptr);
  const auto width = static_cast<std::int64_t>(png_get_image_width(png, info));
  const auto height = static_cast<std::int64_t>(png_get_image_height(png, info));
  const int src_channels = png_get_channels(png, info);
  png_bytepp rows = png_get_rows(png, info);

  auto raw = torch::empty({height, width, src_channels}, torch::kUInt8);
  auto* dst = raw.data_ptr<std::uint8_t>();
  for (std::int64_t r = 0; r < height; ++r) {
    std::memcpy(dst + r * width * src_channels, rows[r], width * src_channels);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  auto image = raw.permute({2, 0, 1}).to(torch::kFloat).div(255.0);
  if (image.size(0) == channels) return image.contiguous();
  if (channels == 1) return image.mean(0, true).contiguous();
  return image.expand({3, height, width}).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  auto img = image.detach().to(torch::kCPU).to(torch::kFloat);
  if (img.dim() == 2) img = img.unsqueeze(0);
  if (img.dim() != 3 || (img.size(0) != 1 && img.size(0) != 3)) {
    throw ShapeError("write_png: expected (1|3, H, W), got " + shape_string(img.sizes()));
  }
  const int channels = static_cast<int>(img.size(0));
  const auto height = img.size(1);
  const auto width = img.size(2);
  auto bytes = img.clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();

  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  auto* base = bytes.data_ptr<std::uint8_t>();
  for (std::int64_t r = 0; r < height; ++r) rows[static_cast<std::size_t>(r)] = base + r * width * channels;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  if (!encode_png(file.get(), rows.data(), static_cast<png_uint_32>(width),
                  static_cast<png_uint_32>(height),
                  channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY)) {
    throw IoError("failed writing " + path.string());
  }
}

torch::Tensor resize_image(const torch::Tensor& image, std::int64_t height, std::int64_t width) {
  if (image.size(-2) == height && image.size(-1) == width) return image;
  namespace F = torch::nn::functional;
  return F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                .size(std::vector<std::int64_t>{height, width})
                                                .mode(torch::kBilinear)
                                                .align_corners(false))
      .squeeze(0);
}

torch::Tensor heatmap(const torch::Tensor& map) {
  auto v = map.detach().to(torch::kFloat).clamp(0.0, 1.0);
  if (v.dim() == 3) v = v.squeeze(0);
  // Piecewise-linear jet: blue -> cyan -> yellow -> red.
  auto r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
  auto g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
  auto b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
  return torch::stack({r, g, b});
}

torch::Tensor to_rgb(const torch::Tensor& image) {
  auto x = image.detach();
  if (x.size(0) == 3) return x;
  if (x.size(0) == 1) return x.expand({3, x.size(1), x.size(2)});
  return x.mean(0, true).expand({3, x.size(1), x.size(2)});
}

torch::Tensor overlay(const torch::Tensor& image, const torch::Tensor& map, double alpha) {
  return (1.0 - alpha) * to_rgb(image) + alpha * heatmap(map);
}

}  // namespace safe
