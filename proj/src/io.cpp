#include "dppt/io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>

#include "dppt/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

namespace dppt {

BinWriter::BinWriter(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw FormatError("cannot open for writing: " + path);
}

BinWriter::~BinWriter() {
    if (f_) std::fclose(f_);
}

void BinWriter::bytes(const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f_) != n) throw FormatError("short write: " + path_);
    offset_ += n;
}

void BinWriter::u8(uint8_t v) { bytes(&v, 1); }
void BinWriter::u32(uint32_t v) { bytes(&v, 4); }
void BinWriter::u64(uint64_t v) { bytes(&v, 8); }
void BinWriter::f64(double v) { bytes(&v, 8); }
void BinWriter::f64s(const double* p, size_t n) { bytes(p, 8 * n); }

void BinWriter::str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void BinWriter::close() {
    if (f_) {
        if (std::fclose(f_) != 0) throw FormatError("close failed: " + path_);
        f_ = nullptr;
    }
}

BinReader::BinReader(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "rb");
    if (!f_) throw FormatError("cannot open for reading: " + path);
}

BinReader::~BinReader() {
    if (f_) std::fclose(f_);
}

void BinReader::fail(const std::string& what) const {
    throw FormatError(strf("%s: %s at byte offset %zu", path_.c_str(), what.c_str(), offset_));
}

void BinReader::bytes(void* p, size_t n) {
    if (std::fread(p, 1, n, f_) != n) fail("truncated file");
    offset_ += n;
}

uint8_t BinReader::u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
}
uint32_t BinReader::u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
}
uint64_t BinReader::u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
}
double BinReader::f64() {
    double v;
    bytes(&v, 8);
    return v;
}
void BinReader::f64s(double* p, size_t n) { bytes(p, 8 * n); }

std::string BinReader::str(uint32_t max_len) {
    uint32_t n = u32();
    if (n > max_len) fail("string length out of range");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
}

bool BinReader::at_eof() {
    int c = std::fgetc(f_);
    if (c == EOF) return true;
    std::ungetc(c, f_);
    return false;
}

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels,
                    int width, int height) {
    if (width <= 0 || height <= 0 || pixels.size() != static_cast<size_t>(width) * height)
        throw ShapeError(strf("png buffer %zu does not match %dx%d", pixels.size(), width, height));
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw FormatError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(f);
        throw FormatError("libpng failure writing " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(r) * width);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

}  // namespace dppt
