#include "gccvit/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gccvit/errors.hpp"

namespace gccvit {

namespace fs = std::filesystem;

namespace {

enum class Format { kUnknown, kPng, kJpeg };

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageDecodeError("cannot open image " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Format sniff(std::span<const std::uint8_t> head) {
  static constexpr std::array<std::uint8_t, 8> kPngSig{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (head.size() >= kPngSig.size() && std::equal(kPngSig.begin(), kPngSig.end(), head.begin())) return Format::kPng;
  if (head.size() >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Format::kJpeg;
  return Format::kUnknown;
}

struct RawRgb {
  std::vector<std::uint8_t> bytes;
  std::size_t width = 0, height = 0;
  bool grayscale = false;
};

RawRgb decode_png(const std::vector<std::uint8_t>& file, const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, file.data(), file.size())) {
    throw ImageDecodeError("corrupt PNG " + path.string() + ": " + image.message);
  }
  RawRgb out;
  out.grayscale = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = PNG_FORMAT_RGB;
  out.width = image.width;
  out.height = image.height;
  out.bytes.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageDecodeError("corrupt PNG " + path.string() + ": " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Plain C control flow only between setjmp and longjmp; every C++ object lives in the caller.
bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, RawRgb* out, char* error) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_on_error;
  if (setjmp(jerr.jump)) {
    std::strncpy(error, jerr.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  out->grayscale = cinfo.jpeg_color_space == JCS_GRAYSCALE;
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out->width = cinfo.output_width;
  out->height = cinfo.output_height;
  out->bytes.resize(out->width * out->height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out->bytes.data() + static_cast<std::size_t>(cinfo.output_scanline) * out->width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

RawRgb decode_jpeg(const std::vector<std::uint8_t>& file, const fs::path& path) {
  RawRgb out;
  char error[JMSG_LENGTH_MAX] = {0};
  if (!decode_jpeg_raw(file.data(), file.size(), &out, error)) {
    throw ImageDecodeError("corrupt JPEG " + path.string() + ": " + error);
  }
  return out;
}

}  // namespace

RgbImage decode_image(const fs::path& path, float rescale, DecodeInfo* info) {
  const auto file = read_file(path);
  RawRgb raw;
  switch (sniff(file)) {
    case Format::kPng:
      raw = decode_png(file, path);
      break;
    case Format::kJpeg:
      raw = decode_jpeg(file, path);
      break;
    case Format::kUnknown:
      throw ImageDecodeError("not a PNG or JPEG file: " + path.string());
  }
  if (raw.width == 0 || raw.height == 0) throw ImageDecodeError("empty image " + path.string());
  if (info) info->grayscale = raw.grayscale;
  std::vector<float> px(raw.bytes.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(static_cast<float>(raw.bytes[i]) * rescale, 0.0f, 1.0f);
  return RgbImage(raw.height, raw.width, std::move(px));
}

RgbImage load_image(const fs::path& path, std::size_t size, float rescale, DecodeInfo* info) {
  return resize_bilinear(decode_image(path, rescale, info), size, size);
}

void write_png(const fs::path& path, const RgbImage& img) {
  std::vector<std::uint8_t> bytes(img.pixels().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels()[i], 0.0f, 1.0f) * 255.0f));
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

bool looks_like_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::array<std::uint8_t, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  return sniff(std::span<const std::uint8_t>(head.data(), static_cast<std::size_t>(in.gcount()))) != Format::kUnknown;
}

Dataset load_dataset(const fs::path& root, ScanStats* stats) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError("dataset directory not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw DatasetError("dataset directory has no class subdirectories: " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  Dataset ds;
  std::size_t skipped = 0;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const auto name = class_dirs[label].filename().string();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (!entry.is_regular_file()) continue;
      if (looks_like_image(entry.path())) {
        files.push_back(entry.path());
      } else {
        ++skipped;
      }
    }
    if (files.empty()) throw DatasetError("class '" + name + "' contains no images");
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    for (auto& f : files) ds.items.push_back(Sample{std::move(f), label, nullptr});
    ds.class_names.push_back(name);
  }
  if (stats) stats->skipped_files = skipped;
  return ds;
}

std::vector<LabeledImage> materialize(const Dataset& ds, std::size_t size, float rescale, DecodeStats* stats) {
  DecodeStats local;
  std::vector<LabeledImage> out;
  out.reserve(ds.items.size());
  for (const auto& item : ds.items) {
    if (item.image) {
      out.push_back({resize_bilinear(*item.image, size, size), item.label});
      ++local.decoded;
      continue;
    }
    try {
      DecodeInfo info;
      out.push_back({load_image(item.path, size, rescale, &info), item.label});
      ++local.decoded;
      local.grayscale += info.grayscale;
    } catch (const ImageDecodeError&) {
      ++local.corrupt;
      local.corrupt_files.push_back(item.path.string());
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace gccvit
