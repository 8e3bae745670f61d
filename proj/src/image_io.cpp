#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "biotk/turbsim.hpp"

namespace biotk {

namespace {

// skips whitespace and '#' comment lines between PGM header tokens
std::string next_pgm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("truncated PGM header");
    return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
        throw FormatError(std::string("bad PGM ") + what + ": " + tok);
    }
    if (pos != tok.size() || v == 0)
        throw FormatError(std::string("bad PGM ") + what + ": " + tok);
    return static_cast<std::size_t>(v);
}

void put_u32_le(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kFsimgMagic[8] = {'F', 'S', 'I', 'M', 'G', '6', '4', '\0'};

} // namespace

Image64 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    if (next_pgm_token(in) != "P5") throw FormatError("not a binary PGM: " + path);
    const std::size_t width = parse_dim(next_pgm_token(in), "width");
    const std::size_t height = parse_dim(next_pgm_token(in), "height");
    const std::size_t maxval = parse_dim(next_pgm_token(in), "maxval");
    if (maxval != 255) throw FormatError("only 8-bit PGM supported");
    // the single whitespace byte after maxval was consumed by the tokenizer
    std::vector<unsigned char> raw(width * height);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw FormatError("truncated PGM pixel data: " + path);
    Image64 img{height, width, std::vector<double>(width * height)};
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<double>(raw[i]);
    return img;
}

void write_pgm(const std::string& path, const Image64& img) {
    if (img.height == 0 || img.width == 0 || img.data.size() != img.height * img.width)
        throw ShapeError("malformed image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 255.0);
        raw[i] = static_cast<unsigned char>(std::lround(v));
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    if (!out) throw FormatError("write failed: " + path);
}

Image64 read_fsimg(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16) throw FormatError("truncated header: " + path);
    if (std::memcmp(header, kFsimgMagic, 8) != 0)
        throw FormatError("bad magic in " + path);
    const std::uint32_t height = get_u32_le(header + 8);
    const std::uint32_t width = get_u32_le(header + 12);
    if (height == 0 || width == 0) throw FormatError("zero dimension in " + path);
    Image64 img{height, width, std::vector<double>(static_cast<std::size_t>(height) * width)};
    static_assert(sizeof(double) == 8);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * 8));
    if (static_cast<std::size_t>(in.gcount()) != img.data.size() * 8)
        throw FormatError("truncated pixel data: " + path);
    return img;
}

void write_fsimg(const std::string& path, const Image64& img) {
    if (img.height == 0 || img.width == 0 || img.data.size() != img.height * img.width)
        throw ShapeError("malformed image");
    std::string header(kFsimgMagic, 8);
    put_u32_le(header, static_cast<std::uint32_t>(img.height));
    put_u32_le(header, static_cast<std::uint32_t>(img.width));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size() * 8));
    if (!out) throw FormatError("write failed: " + path);
}

} // namespace biotk
