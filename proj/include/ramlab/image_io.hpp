#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ramlab/data.hpp"
#include "ramlab/tensor.hpp"

namespace ramlab {

namespace detail {

inline uint8_t quantize8(double v) {
    double q = std::lround(255.0 * v);
    return uint8_t(std::clamp(q, 0.0, 255.0));
}

// Reads one whitespace-delimited header token, skipping '#' comment lines.
inline std::string pnm_token(std::istream& in) {
    std::string tok;
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(char(ch));
        ch = in.get();
    }
    if (tok.empty()) throw std::runtime_error("pnm: malformed header");
    return tok;
}

inline int pnm_int(std::istream& in) {
    std::string tok = pnm_token(in);
    try {
        return std::stoi(tok);
    } catch (...) {
        throw std::runtime_error("pnm: malformed header token '" + tok + "'");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit): images. Values stored as round(255 v).
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(2) != 3)
        throw std::invalid_argument("write_ppm: expected H x W x 3 tensor");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    std::vector<uint8_t> buf(size_t(img.size()));
    for (int64_t i = 0; i < img.size(); ++i) buf[size_t(i)] = detail::quantize8(img[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error("write_ppm: short write to " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    if (detail::pnm_token(in) != "P6") throw std::runtime_error("read_ppm: not a P6 file");
    int w = detail::pnm_int(in), h = detail::pnm_int(in), maxval = detail::pnm_int(in);
    if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("read_ppm: malformed header");
    // single whitespace byte separates header from payload
    std::vector<uint8_t> buf(size_t(h) * size_t(w) * 3);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size()))
        throw std::runtime_error("read_ppm: truncated payload in " + path);
    Tensor img({h, w, 3});
    for (int64_t i = 0; i < img.size(); ++i) img[i] = double(buf[size_t(i)]) / 255.0;
    return img;
}

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit): label maps (class indices verbatim) and heatmaps.
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path, const std::vector<uint8_t>& bytes, int h, int w) {
    if (int64_t(bytes.size()) != int64_t(h) * int64_t(w))
        throw std::invalid_argument("write_pgm: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write_pgm: short write to " + path);
}

inline void write_label_pgm(const std::string& path, const LabelMap& labels) {
    std::vector<uint8_t> bytes(size_t(labels.size()));
    for (size_t i = 0; i < bytes.size(); ++i) {
        int c = labels.v[i];
        if (c < 0 || c > 255) throw std::invalid_argument("write_label_pgm: class out of u8 range");
        bytes[i] = uint8_t(c);
    }
    write_pgm(path, bytes, labels.h, labels.w);
}

inline std::vector<uint8_t> read_pgm(const std::string& path, int& h, int& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
    if (detail::pnm_token(in) != "P5") throw std::runtime_error("read_pgm: not a P5 file");
    w = detail::pnm_int(in);
    h = detail::pnm_int(in);
    int maxval = detail::pnm_int(in);
    if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("read_pgm: malformed header");
    std::vector<uint8_t> buf(size_t(h) * size_t(w));
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size()))
        throw std::runtime_error("read_pgm: truncated payload in " + path);
    return buf;
}

inline LabelMap read_label_pgm(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = read_pgm(path, h, w);
    LabelMap out(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) out.v[i] = int(bytes[i]);
    return out;
}

}  // namespace ramlab
