#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dygait/errors.hpp"

// 8-bit PGM read/write. P5 is the native format; P2 is accepted on read.
// Nonzero pixels are foreground.

namespace dygait::img {

struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> px;  // row-major h*w

    uint8_t at(int r, int c) const { return px[static_cast<size_t>(r) * w + c]; }
    uint8_t& at(int r, int c) { return px[static_cast<size_t>(r) * w + c]; }
};

// Distinguishes "file cannot be opened" (IoError, caller aborts) from "file
// opened but the content is not a usable PGM" (ParseError, caller may drop
// the frame and continue).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {
// Reads the next header token, skipping whitespace and # comments.
inline std::string pgm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

inline int pgm_int(std::istream& in, const std::string& what, const std::string& path) {
    const std::string tok = pgm_token(in);
    if (tok.empty()) throw ParseError("truncated PGM header (" + what + "): " + path);
    try {
        size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad PGM " + what + " '" + tok + "': " + path);
    }
}
}  // namespace detail

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);

    const std::string magic = detail::pgm_token(in);
    if (magic != "P5" && magic != "P2")
        throw ParseError("not a PGM (magic '" + magic + "'): " + path);
    Image im;
    im.w = detail::pgm_int(in, "width", path);
    im.h = detail::pgm_int(in, "height", path);
    const int maxval = detail::pgm_int(in, "maxval", path);
    if (im.w < 1 || im.h < 1 || maxval < 1 || maxval > 255)
        throw ParseError("unsupported PGM geometry " + std::to_string(im.w) + "x" +
                         std::to_string(im.h) + " maxval " + std::to_string(maxval) + ": " + path);
    const size_t n = static_cast<size_t>(im.w) * im.h;
    im.px.resize(n);
    if (magic == "P5") {
        in.read(reinterpret_cast<char*>(im.px.data()), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw ParseError("truncated PGM pixel data: " + path);
    } else {
        for (size_t i = 0; i < n; ++i) {
            const int v = detail::pgm_int(in, "pixel", path);
            if (v > maxval) throw ParseError("pixel above maxval: " + path);
            im.px[i] = static_cast<uint8_t>(v);
        }
    }
    return im;
}

inline void write_pgm(const std::string& path, const Image& im) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << im.w << " " << im.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(im.px.data()),
              static_cast<std::streamsize>(im.px.size()));
    if (!out) throw IoError("short write: " + path);
}

}  // namespace dygait::img
