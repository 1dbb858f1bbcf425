#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ramlab/model.hpp"

namespace ramlab {

// Checkpoint layout: magic "RAMLAB01", length-prefixed UTF-8 config block of
// key=value lines, u32 tensor count, then per tensor: length-prefixed name,
// u32 rank, u64 extents, little-endian float64 payload.

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

inline void write_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline void write_f64(std::ostream& out, double d) { write_u64(out, std::bit_cast<uint64_t>(d)); }

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string config_block(const SegModelConfig& cfg) {
    std::ostringstream os;
    os << "img_h=" << cfg.img_h << "\n";
    os << "img_w=" << cfg.img_w << "\n";
    os << "patch=" << cfg.patch << "\n";
    os << "dim=" << cfg.dim << "\n";
    os << "layers=" << cfg.layers << "\n";
    os << "heads=" << cfg.heads << "\n";
    os << "classes=" << cfg.classes << "\n";
    os << "mixer=" << to_string(cfg.mixer) << "\n";
    os << "window=" << cfg.window << "\n";
    os << "pool_window=" << cfg.pool_window << "\n";
    os << "attention.mode=" << to_string(cfg.attention.mode) << "\n";
    os << "attention.threshold=" << fmt_double(cfg.attention.threshold_T) << "\n";
    os << "attention.dropout=" << fmt_double(cfg.attention.dropout_p) << "\n";
    os << "attention.tau=" << fmt_double(cfg.attention.temperature_tau) << "\n";
    os << "attention.rad_at_eval=" << (cfg.attention.rad_at_eval ? 1 : 0) << "\n";
    return os.str();
}

inline SegModelConfig config_from_block(const std::string& block) {
    std::map<std::string, std::string> kv;
    std::istringstream is(block);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("checkpoint: bad config line " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("checkpoint: missing config key " + k);
        return it->second;
    };
    SegModelConfig cfg;
    cfg.img_h = std::stoi(get("img_h"));
    cfg.img_w = std::stoi(get("img_w"));
    cfg.patch = std::stoi(get("patch"));
    cfg.dim = std::stoi(get("dim"));
    cfg.layers = std::stoi(get("layers"));
    cfg.heads = std::stoi(get("heads"));
    cfg.classes = std::stoi(get("classes"));
    cfg.mixer = mixer_from(get("mixer"));
    cfg.window = std::stoi(get("window"));
    cfg.pool_window = std::stoi(get("pool_window"));
    cfg.attention.mode = attention_mode_from(get("attention.mode"));
    cfg.attention.threshold_T = std::stod(get("attention.threshold"));
    cfg.attention.dropout_p = std::stod(get("attention.dropout"));
    cfg.attention.temperature_tau = std::stod(get("attention.tau"));
    cfg.attention.rad_at_eval = get("attention.rad_at_eval") == "1";
    return cfg.normalized();
}

}  // namespace detail

inline void save_checkpoint(const SegModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write("RAMLAB01", 8);
    std::string cfg = detail::config_block(m.cfg);
    detail::write_u32(out, uint32_t(cfg.size()));
    out.write(cfg.data(), std::streamsize(cfg.size()));
    detail::write_u32(out, uint32_t(m.params.size()));
    for (const auto& p : m.params) {
        detail::write_u32(out, uint32_t(p.name.size()));
        out.write(p.name.data(), std::streamsize(p.name.size()));
        detail::write_u32(out, uint32_t(p.value.rank()));
        for (int d : p.value.shape) detail::write_u64(out, uint64_t(d));
        for (int64_t i = 0; i < p.value.size(); ++i) detail::write_f64(out, p.value[i]);
    }
    if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

inline SegModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "RAMLAB01")
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint32_t cfg_len = detail::read_u32(in);
    std::string block(cfg_len, '\0');
    in.read(block.data(), std::streamsize(cfg_len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated config block");
    SegModel m;
    m.cfg = detail::config_from_block(block);
    uint32_t count = detail::read_u32(in);
    for (uint32_t t = 0; t < count; ++t) {
        uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), std::streamsize(name_len));
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor name");
        uint32_t rank = detail::read_u32(in);
        std::vector<int> shape;
        for (uint32_t r = 0; r < rank; ++r) shape.push_back(int(detail::read_u64(in)));
        Tensor v(shape);
        for (int64_t i = 0; i < v.size(); ++i) v[i] = detail::read_f64(in);
        m.params.push_back({std::move(name), std::move(v)});
    }
    return m;
}

}  // namespace ramlab
