#pragma once

// Binary PGM (P5, maxval 255) reader and writer.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tiler/error.hpp"
#include "tiler/scene.hpp"

namespace tiler {

struct GrayRaster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;   // row-major
};

inline void write_pgm(const std::string& path, int width, int height,
                      std::span<const std::uint8_t> pixels)
{
    if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height)
        throw Error("write_pgm: raster size does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("write_pgm: cannot open " + path);
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out)
        throw Error("write_pgm: write failed for " + path);
}

inline void write_pgm(const std::string& path, const Image& img)
{
    write_pgm(path, img.size, img.size, img.pixels);
}

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pgm_token(std::istream& in)
{
    std::string tok;
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n')
                ch = in.get();
        } else if (std::isspace(ch)) {
            if (!tok.empty())
                return tok;
        } else {
            tok.push_back(static_cast<char>(ch));
        }
        ch = in.get();
    }
    return tok;
}

inline int pgm_int(std::istream& in, const char* what)
{
    const std::string tok = pgm_token(in);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size())
            throw FormatError("");
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("PGM: bad ") + what + " '" + tok + "'");
    }
}

} // namespace detail

inline GrayRaster read_pgm_raster(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("read_pgm: cannot open " + path);
    if (detail::pgm_token(in) != "P5")
        throw FormatError("PGM: " + path + " is not a binary (P5) graymap");
    GrayRaster r;
    r.width = detail::pgm_int(in, "width");
    r.height = detail::pgm_int(in, "height");
    const int maxval = detail::pgm_int(in, "maxval");
    if (r.width <= 0 || r.height <= 0)
        throw FormatError("PGM: non-positive dimensions in " + path);
    if (maxval != 255)
        throw FormatError("PGM: only maxval 255 is supported");
    r.pixels.resize(static_cast<std::size_t>(r.width) * r.height);
    in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(r.pixels.size()))
        throw FormatError("PGM: truncated pixel data in " + path);
    return r;
}

inline Image read_pgm(const std::string& path)
{
    GrayRaster r = read_pgm_raster(path);
    if (r.width != r.height)
        throw FormatError("PGM: expected a square image in " + path);
    Image img;
    img.size = r.width;
    img.pixels = std::move(r.pixels);
    return img;
}

} // namespace tiler
