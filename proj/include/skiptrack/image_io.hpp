#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "skiptrack/errors.hpp"
#include "skiptrack/masking.hpp"

namespace skiptrack {

// Owned interleaved RGB8 image.
struct Image {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

namespace detail {

// PPM/PGM token: skips whitespace and '#' comments.
inline std::string pnm_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

inline std::size_t pnm_number(std::istream& in, const char* what) {
    const std::string tok = pnm_token(in);
    if (tok.empty()) throw ParseError(std::string("pnm: missing ") + what);
    std::size_t value = 0;
    for (char ch : tok) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            throw ParseError(std::string("pnm: malformed ") + what + " '" + tok + "'");
        }
        value = value * 10 + static_cast<std::size_t>(ch - '0');
    }
    return value;
}

} // namespace detail

// Binary P6, maxval 255 only.
inline Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    if (detail::pnm_token(f) != "P6") throw ParseError("ppm '" + path + "': not a binary P6 file");
    Image img;
    img.width = detail::pnm_number(f, "width");
    img.height = detail::pnm_number(f, "height");
    const std::size_t maxval = detail::pnm_number(f, "maxval");
    if (img.width == 0 || img.height == 0) throw ParseError("ppm '" + path + "': empty image");
    if (maxval != 255) throw ParseError("ppm '" + path + "': only maxval 255 is supported");
    img.rgb.resize(img.width * img.height * 3);
    f.read(reinterpret_cast<char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw ParseError("ppm '" + path + "': truncated pixel data");
    }
    return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

// Raw interleaved RGB8, dimensions supplied externally (manifest).
inline Image read_raw_rgb8(const std::string& path, std::size_t width, std::size_t height) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    const auto size = static_cast<std::size_t>(f.tellg());
    if (size != width * height * 3) {
        throw ParseError("raw frame '" + path + "': expected " +
                         std::to_string(width * height * 3) + " bytes, found " +
                         std::to_string(size));
    }
    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(size);
    f.seekg(0);
    f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(size));
    if (!f) throw IoError("read failed for '" + path + "'");
    return img;
}

// Binary P5; masked cells black, kept cells white.
inline void write_mask_pgm(const std::string& path, const MaskPattern& pattern) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "P5\n" << pattern.grid_w << ' ' << pattern.grid_h << "\n255\n";
    for (std::uint8_t cell : pattern.grid) {
        f.put(cell ? '\0' : static_cast<char>(255));
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline void write_csv_grid(const std::string& path, std::size_t rows, std::size_t cols,
                           const std::vector<double>& values) {
    if (values.size() != rows * cols) throw ArgumentError("write_csv_grid: size mismatch");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (j) f << ',';
            f << values[i * cols + j];
        }
        f << '\n';
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

} // namespace skiptrack
