#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dppt {

// Little-endian binary container I/O. Readers track the byte offset so
// format errors can name the position that failed.

class BinWriter {
public:
    explicit BinWriter(const std::string& path);
    ~BinWriter();
    BinWriter(const BinWriter&) = delete;
    BinWriter& operator=(const BinWriter&) = delete;

    void bytes(const void* p, size_t n);
    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f64(double v);
    void f64s(const double* p, size_t n);
    void str(const std::string& s);  // u32 length + raw bytes
    void close();
    size_t offset() const { return offset_; }

private:
    std::FILE* f_;
    std::string path_;
    size_t offset_ = 0;
};

class BinReader {
public:
    explicit BinReader(const std::string& path);
    ~BinReader();
    BinReader(const BinReader&) = delete;
    BinReader& operator=(const BinReader&) = delete;

    void bytes(void* p, size_t n);
    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    double f64();
    void f64s(double* p, size_t n);
    std::string str(uint32_t max_len = 1u << 20);
    bool at_eof();
    size_t offset() const { return offset_; }
    [[noreturn]] void fail(const std::string& what) const;

private:
    std::FILE* f_;
    std::string path_;
    size_t offset_ = 0;
};

// 8-bit grayscale PNG.
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels,
                    int width, int height);

}  // namespace dppt
