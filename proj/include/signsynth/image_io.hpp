#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "signsynth/core.hpp"

namespace signsynth {

namespace detail {

struct FileHandle {
    FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f)
            std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

inline ImageBuffer load_png(FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw IoError("png: allocation failure reading " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: allocation failure reading " + path);
    }

    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows;
    int w = 0, h = 0, channels = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: failed to decode " + path);
    }

    png_init_io(png, f);
    png_read_info(png, info);

    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16)
        png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 3 && channels != 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: unsupported channel count in " + path);
    }

    raw.resize(static_cast<size_t>(w) * h * channels);
    rows.resize(h);
    for (int y = 0; y < h; ++y)
        rows[y] = raw.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    return from_bytes(raw.data(), w, h, channels);
}

inline ImageBuffer load_jpeg(FILE* f, const std::string& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;

    std::vector<uint8_t> raw;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("jpeg: failed to decode " + path);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    raw.resize(static_cast<size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = raw.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);

    return from_bytes(raw.data(), w, h, 3);
}

}  // namespace detail

/// Loads a PNG or JPEG (detected by magic bytes) as an 8-bit image promoted
/// to float. PNG alpha is preserved (4 channels); everything else is RGB.
inline ImageBuffer load_image(const std::string& path) {
    detail::FileHandle fh(path, "rb");
    if (!fh.f)
        throw IoError("cannot open " + path);
    uint8_t magic[8] = {};
    const size_t got = std::fread(magic, 1, sizeof magic, fh.f);
    std::rewind(fh.f);
    if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0)
        return detail::load_png(fh.f, path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8)
        return detail::load_jpeg(fh.f, path);
    throw IoError("unrecognized image format: " + path);
}

/// Writes an 8-bit PNG (RGB or RGBA depending on channels). Quantization
/// from float happens here, once.
inline void save_png(const ImageBuffer& img, const std::string& path) {
    if (img.channels != 3 && img.channels != 4)
        throw ValueError("save_png: image must have 3 or 4 channels");
    detail::FileHandle fh(path, "wb");
    if (!fh.f)
        throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw IoError("png: allocation failure writing " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: allocation failure writing " + path);
    }

    std::vector<uint8_t> raw = to_bytes(img);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = raw.data() + static_cast<size_t>(y) * img.width * img.channels;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: failed to encode " + path);
    }

    png_init_io(png, fh.f);
    png_set_compression_level(png, 6);  // fixed so output bytes are reproducible
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace signsynth
