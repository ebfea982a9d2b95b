#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "catprune/config.hpp"
#include "catprune/grid.hpp"

namespace catprune {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for reading: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw io_error("read failed: " + path.string());
    return std::move(buf).str();
}

}  // namespace detail

struct PgmImage {
    int width  = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint8_t> pixels;  // row-major
};

inline void write_pgm(const std::filesystem::path& path, const PgmImage& img) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
        throw std::invalid_argument("write_pgm: bad image dimensions");
    }
    std::string out = "P5\n" + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    detail::write_file(path, out);
}

inline PgmImage read_pgm(const std::filesystem::path& path) {
    const std::string raw = detail::read_file(path);
    std::istringstream in(raw);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || magic != "P5" || w < 1 || h < 1 || maxval != 255) {
        throw io_error("read_pgm: not a binary 8-bit PGM: " + path.string());
    }
    in.get();  // single whitespace after maxval
    PgmImage img;
    img.width  = w;
    img.height = h;
    img.maxval = maxval;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    const std::size_t offset = static_cast<std::size_t>(in.tellg());
    if (raw.size() - offset < img.pixels.size()) {
        throw io_error("read_pgm: truncated pixel data: " + path.string());
    }
    std::memcpy(img.pixels.data(), raw.data() + offset, img.pixels.size());
    return img;
}

// Selected tokens white, the rest black.
inline PgmImage selection_mask_image(const TokenIndexSet& selected, int h, int w) {
    PgmImage img;
    img.width  = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(w) * h, 0);
    for (int id : selected.ids()) img.pixels[id] = 255;
    return img;
}

// Cluster ids spread over the gray ramp; a single cluster renders black.
inline PgmImage cluster_image(const std::vector<int>& assignment, int h, int w, int k) {
    if (assignment.size() != static_cast<std::size_t>(h) * w) {
        throw std::invalid_argument("cluster_image: assignment size mismatch");
    }
    PgmImage img;
    img.width  = w;
    img.height = h;
    img.pixels.resize(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const int id = assignment[i];
        if (id < 0 || id >= k) {
            throw std::invalid_argument("cluster_image: id out of range");
        }
        img.pixels[i] = k < 2 ? 0
                              : static_cast<std::uint8_t>(
                                    round_half_up(id * 255.0 / (k - 1)));
    }
    return img;
}

// Flat little-endian f64 dump with a 16-byte header {h, w, d, step}.
inline void write_latent_bin(const std::filesystem::path& path, const TokenGrid& g,
                             int step) {
    std::string out;
    out.reserve(16 + g.data.size() * 8);
    detail::put_u32_le(out, static_cast<std::uint32_t>(g.height));
    detail::put_u32_le(out, static_cast<std::uint32_t>(g.width));
    detail::put_u32_le(out, static_cast<std::uint32_t>(g.channels));
    detail::put_u32_le(out, static_cast<std::uint32_t>(step));
    for (double v : g.data) detail::put_f64_le(out, v);
    detail::write_file(path, out);
}

struct LatentFile {
    TokenGrid grid;
    int step = 0;
};

inline LatentFile read_latent_bin(const std::filesystem::path& path) {
    const std::string raw = detail::read_file(path);
    if (raw.size() < 16) throw io_error("read_latent_bin: truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const int h = static_cast<int>(detail::get_u32_le(p));
    const int w = static_cast<int>(detail::get_u32_le(p + 4));
    const int d = static_cast<int>(detail::get_u32_le(p + 8));
    LatentFile out;
    out.step = static_cast<int>(detail::get_u32_le(p + 12));
    if (h < 1 || w < 1 || d < 1) throw io_error("read_latent_bin: bad header");
    const std::size_t count = static_cast<std::size_t>(h) * w * d;
    if (raw.size() != 16 + count * 8) {
        throw io_error("read_latent_bin: size does not match header");
    }
    out.grid = TokenGrid(h, w, d);
    for (std::size_t i = 0; i < count; ++i) {
        out.grid.data[i] = detail::get_f64_le(p + 16 + i * 8);
    }
    return out;
}

// token_index,rn_norm,frequency rows with full double round-trip precision.
inline void write_noise_csv(const std::filesystem::path& path,
                            const std::vector<double>& rn_norms,
                            const std::vector<double>& freq) {
    if (rn_norms.size() != freq.size()) {
        throw std::invalid_argument("write_noise_csv: column length mismatch");
    }
    std::string out = "token_index,rn_norm,frequency\n";
    char buf[128];
    for (std::size_t t = 0; t < rn_norms.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", t, rn_norms[t], freq[t]);
        out += buf;
    }
    detail::write_file(path, out);
}

inline void write_scores_csv(const std::filesystem::path& path,
                             const std::vector<double>& scores) {
    std::string out = "cluster_id,score\n";
    char buf[96];
    for (std::size_t c = 0; c < scores.size(); ++c) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", c, scores[c]);
        out += buf;
    }
    detail::write_file(path, out);
}

// Plain key = value run configuration. '#' starts a comment, blank lines are
// skipped, keys must be known, and validation failures point at the line that
// set the offending key.
struct ExperimentConfig {
    RunConfig run;
    std::string out_dir     = "out";
    bool export_masks       = true;
    bool export_noise_csv   = true;
    bool export_latent      = true;
    bool export_timings     = false;  // off keeps metrics.json byte-stable
};

namespace detail {

inline bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes") { out = true;  return true; }
    if (v == "false" || v == "0" || v == "no") { out = false; return true; }
    return false;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& origin) {
    ExperimentConfig cfg;
    std::map<std::string, int, std::less<>> key_line;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;

    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        if (strip(line).empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        if (key.empty()) fail("empty key");
        if (val.empty()) fail("empty value for '" + key + "'");
        if (key_line.count(key)) fail("duplicate key '" + key + "'");
        key_line[key] = lineno;

        RunConfig& r = cfg.run;
        try {
            if (key == "total_steps")           r.total_steps = std::stoi(val);
            else if (key == "warmup_steps")     r.warmup_steps = std::stoi(val);
            else if (key == "alpha")            r.alpha = std::stod(val);
            else if (key == "cluster_count")    r.cluster_count = std::stoi(val);
            else if (key == "ewma_decay")       r.ewma_decay = std::stod(val);
            else if (key == "stale_fraction")   r.stale_fraction = std::stod(val);
            else if (key == "pos_weight")       r.pos_weight = std::stod(val);
            else if (key == "neighbor_mix")     r.neighbor_mix = std::stod(val);
            else if (key == "intra_balance")    r.intra_balance = std::stod(val);
            else if (key == "kmeans_max_iters") r.kmeans_max_iters = std::stoi(val);
            else if (key == "seed")             r.seed = std::stoull(val);
            else if (key == "grid_height")      r.grid_height = std::stoi(val);
            else if (key == "grid_width")       r.grid_width = std::stoi(val);
            else if (key == "noise_channels")   r.noise_channels = std::stoi(val);
            else if (key == "layers")           r.layers = std::stoi(val);
            else if (key == "model_width")      r.model_width = std::stoi(val);
            else if (key == "heads")            r.heads = std::stoi(val);
            else if (key == "mlp_ratio")        r.mlp_ratio = std::stoi(val);
            else if (key == "text_tokens")      r.text_tokens = std::stoi(val);
            else if (key == "model")            r.model = parse_model_kind(val);
            else if (key == "strategy")         r.strategy = parse_strategy(val);
            else if (key == "out_dir")          cfg.out_dir = val;
            else if (key == "export_masks" || key == "export_noise_csv" ||
                     key == "export_latent" || key == "export_timings") {
                bool b = false;
                if (!detail::parse_bool(val, b)) fail("expected a boolean for '" + key + "'");
                if (key == "export_masks")      cfg.export_masks = b;
                if (key == "export_noise_csv")  cfg.export_noise_csv = b;
                if (key == "export_latent")     cfg.export_latent = b;
                if (key == "export_timings")    cfg.export_timings = b;
            } else {
                fail("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument& e) {
            const std::string what = e.what();
            if (what.rfind(origin + ":", 0) == 0) throw;  // already line-tagged
            fail("bad value for '" + key + "': " + val);
        } catch (const std::out_of_range&) {
            fail("value out of range for '" + key + "': " + val);
        }
    }

    // Re-map validation errors onto the line that set the key when possible.
    try {
        cfg.run.validate();
    } catch (const std::invalid_argument& e) {
        const std::string what = e.what();
        const std::size_t colon = what.find(':');
        if (colon != std::string::npos) {
            const auto it = key_line.find(what.substr(0, colon));
            if (it != key_line.end()) {
                throw std::invalid_argument(origin + ":" +
                                            std::to_string(it->second) + ": " + what);
            }
        }
        throw std::invalid_argument(origin + ": " + what);
    }
    return cfg;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
    return parse_config_text(detail::read_file(path), path.string());
}

}  // namespace catprune
