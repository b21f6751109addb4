#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "json.hpp"

#include "stemfactor/error.hpp"
#include "stemfactor/maps.hpp"

namespace stemfactor {
namespace {

using Rgba = std::array<unsigned char, 4>;

constexpr std::array<Rgba, 16> kLabelPalette{{
    {31, 119, 180, 255},  {255, 127, 14, 255},  {44, 160, 44, 255},   {214, 39, 40, 255},
    {148, 103, 189, 255}, {140, 86, 75, 255},   {227, 119, 194, 255}, {127, 127, 127, 255},
    {188, 189, 34, 255},  {23, 190, 207, 255},  {174, 199, 232, 255}, {255, 187, 120, 255},
    {152, 223, 138, 255}, {255, 152, 150, 255}, {197, 176, 213, 255}, {196, 156, 148, 255},
}};

constexpr std::array<Rgba, 6> kOverlapPalette{{
    {0, 0, 0, 255},
    {255, 0, 0, 255},
    {255, 165, 0, 255},
    {255, 255, 0, 255},
    {0, 200, 0, 255},
    {0, 0, 255, 255},
}};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

struct PngPixels {
  int bit_depth = 8;
  int color_type = PNG_COLOR_TYPE_PALETTE;
  std::vector<png_color> palette;
  std::vector<std::vector<unsigned char>> rows;
};

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, const PngPixels& px) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::IoFailure, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoFailure, "libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), px.bit_depth,
               px.color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!px.palette.empty())
    png_set_PLTE(png, info, const_cast<png_colorp>(px.palette.data()), static_cast<int>(px.palette.size()));
  png_write_info(png, info);
  for (const auto& row : px.rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) fail(ErrorCode::IoFailure, "cannot flush " + path.string());
}

template <std::size_t N>
std::vector<png_color> to_png_palette(const std::array<Rgba, N>& colors) {
  std::vector<png_color> out;
  for (const auto& c : colors) out.push_back(png_color{c[0], c[1], c[2]});
  return out;
}

nlohmann::ordered_json rgba_json(const Rgba& c) { return {c[0], c[1], c[2], c[3]}; }

}  // namespace

Rgba label_color(int label) {
  return kLabelPalette[static_cast<std::size_t>(((label % 16) + 16) % 16)];
}

Rgba overlap_color(int cls) {
  if (cls <= 0) return kOverlapPalette[0];
  if (cls < static_cast<int>(kOverlapPalette.size())) return kOverlapPalette[static_cast<std::size_t>(cls)];
  // More than five thresholds: extra classes borrow the label palette.
  return label_color(cls);
}

std::vector<std::filesystem::path> render_maps(const ClusterMaps& maps, const std::string& path_prefix) {
  const std::size_t count = maps.m * maps.n;
  if (maps.labels.size() != count || maps.ratio.size() != count || maps.overlap_classes.size() != count)
    fail(ErrorCode::LengthMismatch, "map lengths do not match the scan grid");
  validate_thresholds(maps.thresholds);

  const std::filesystem::path labels_path = path_prefix + "labels.png";
  const std::filesystem::path ratio_path = path_prefix + "ratio.png";
  const std::filesystem::path overlap_path = path_prefix + "overlap.png";
  const std::filesystem::path legend_path = path_prefix + "legend.json";

  PngPixels labels;
  labels.palette = to_png_palette(kLabelPalette);
  PngPixels ratio;
  ratio.bit_depth = 16;
  ratio.color_type = PNG_COLOR_TYPE_GRAY;
  const int classes = static_cast<int>(maps.thresholds.size()) + 1;
  PngPixels overlap;
  for (int c = 0; c < classes; ++c) {
    const Rgba col = overlap_color(c);
    overlap.palette.push_back(png_color{col[0], col[1], col[2]});
  }

  for (std::size_t r = 0; r < maps.m; ++r) {
    std::vector<unsigned char> lrow(maps.n);
    std::vector<unsigned char> rrow(2 * maps.n);
    std::vector<unsigned char> orow(maps.n);
    for (std::size_t c = 0; c < maps.n; ++c) {
      const std::size_t j = r * maps.n + c;
      lrow[c] = static_cast<unsigned char>(((maps.labels[j] % 16) + 16) % 16);
      const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(maps.ratio[j], 0.0, 1.0) * 65535.0));
      rrow[2 * c] = static_cast<unsigned char>(v >> 8);
      rrow[2 * c + 1] = static_cast<unsigned char>(v & 0xff);
      orow[c] = static_cast<unsigned char>(std::clamp(maps.overlap_classes[j], 0, classes - 1));
    }
    labels.rows.push_back(std::move(lrow));
    ratio.rows.push_back(std::move(rrow));
    overlap.rows.push_back(std::move(orow));
  }

  write_png(labels_path, maps.n, maps.m, labels);
  write_png(ratio_path, maps.n, maps.m, ratio);
  write_png(overlap_path, maps.n, maps.m, overlap);

  nlohmann::ordered_json legend;
  legend["labels"]["k"] = maps.k;
  legend["labels"]["note"] = "palette index = label mod 16";
  for (int c = 0; c < maps.k; ++c)
    legend["labels"]["colors"].push_back({{"label", c}, {"rgba", rgba_json(label_color(c))}});
  legend["ratio"]["encoding"] = "16-bit gray, value = round(ratio * 65535)";
  for (int c = 0; c < classes; ++c) {
    nlohmann::ordered_json entry;
    entry["class"] = c;
    if (c == 0)
      entry["threshold"] = nullptr;
    else
      entry["threshold"] = maps.thresholds[static_cast<std::size_t>(c - 1)];
    entry["rgba"] = rgba_json(overlap_color(c));
    legend["overlap"]["classes"].push_back(std::move(entry));
  }
  legend["overlap"]["rule"] = "class = number of thresholds t with ratio >= t";

  std::ofstream out(legend_path, std::ios::binary);
  out << legend.dump(2) << "\n";
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + legend_path.string());
  return {labels_path, ratio_path, overlap_path, legend_path};
}

RgbaImage read_png_rgba(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::IoFailure, "cannot read " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGBA;
  RgbaImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(out.width * out.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::IoFailure, "cannot decode " + path.string() + ": " + image.message);
  }
  return out;
}

std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, std::size_t& width,
                                           std::size_t& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::IoFailure, "cannot read " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_LINEAR_Y;
  width = image.width;
  height = image.height;
  std::vector<std::uint16_t> out(width * height);
  if (!png_image_finish_read(&image, nullptr, out.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::IoFailure, "cannot decode " + path.string() + ": " + image.message);
  }
  return out;
}

}  // namespace stemfactor
