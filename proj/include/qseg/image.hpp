#pragma once

/// Grayscale image container, PGM (P5) and PNG (8-bit gray) I/O, synthetic
/// scene generation with ground truth, label-image helpers and accuracy
/// scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <png.h>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "noise.hpp"
#include "rng.hpp"

namespace qseg {

struct GrayImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major intensities 0..255

    // Optional ground truth: per-pixel class labels 1..truth_q (empty if none).
    std::vector<std::uint8_t> truth;
    int truth_q = 0;

    std::size_t size() const { return pixels.size(); }
    std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t(y) * width + x]; }
};

enum class ImageFormat { pgm, png };

// --------------------------------------------------------------------------
// PGM
// --------------------------------------------------------------------------

namespace detail {

/// Whole-file parser so errors can name exact byte offsets.
inline GrayImage parse_pgm(const std::vector<char>& buf, const std::string& name) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> void {
        throw parse_error(name + ": " + what + " at byte " + std::to_string(pos));
    };
    auto skip_ws = [&] {
        while (pos < buf.size()) {
            const char c = buf[pos];
            if (c == '#') { // comment runs to end of line
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> std::uint64_t {
        skip_ws();
        if (pos >= buf.size()) fail("truncated header: expected integer");
        if (buf[pos] < '0' || buf[pos] > '9') fail("expected integer");
        std::uint64_t v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + static_cast<std::uint64_t>(buf[pos] - '0');
            if (v > 0xFFFFFFFFULL) fail("integer overflow");
            ++pos;
        }
        return v;
    };

    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') fail("not a binary PGM (P5)");
    pos = 2;
    const std::uint64_t w = read_uint();
    const std::uint64_t h = read_uint();
    const std::uint64_t maxval = read_uint();
    if (w == 0 || h == 0) fail("zero image dimension");
    if (maxval != 255) fail("maxval " + std::to_string(maxval) + " unsupported (must be 255)");
    if (pos >= buf.size()) fail("truncated header: missing raster separator");
    const char sep = buf[pos];
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') fail("expected whitespace before raster");
    ++pos;

    GrayImage img;
    img.width = static_cast<std::uint32_t>(w);
    img.height = static_cast<std::uint32_t>(h);
    const std::size_t need = static_cast<std::size_t>(w) * h;
    if (buf.size() - pos < need) {
        pos = buf.size();
        throw parse_error(name + ": truncated raster, expected " + std::to_string(need) + " bytes at byte " +
                          std::to_string(buf.size()));
    }
    img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                      buf.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

} // namespace detail

inline GrayImage load_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path.string() + "' for reading");
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return detail::parse_pgm(buf, path.string());
}

inline void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os.flush()) throw io_error("write to '" + path.string() + "' failed");
}

// --------------------------------------------------------------------------
// PNG (8-bit grayscale only; color inputs are rejected, not converted)
// --------------------------------------------------------------------------

inline GrayImage load_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw io_error("cannot open '" + path.string() + "' for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw io_error("libpng initialization failed");
    }
    GrayImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw parse_error(path.string() + ": PNG decode failed");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw parse_error(path.string() + ": PNG must be 8-bit grayscale (color type " + std::to_string(color) +
                          ", depth " + std::to_string(depth) + ")");
    }
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    img.pixels.resize(std::size_t(img.width) * img.height);
    std::vector<png_bytep> rows(img.height);
    for (std::uint32_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + std::size_t(y) * img.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void save_png(const GrayImage& img, const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw io_error("cannot open '" + path.string() + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw io_error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw io_error("write to '" + path.string() + "' failed");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (std::uint32_t y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.pixels.data() + std::size_t(y) * img.width);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline GrayImage load_image(const std::filesystem::path& path, ImageFormat fmt) {
    return fmt == ImageFormat::pgm ? load_pgm(path) : load_png(path);
}

inline void save_image(const GrayImage& img, const std::filesystem::path& path, ImageFormat fmt) {
    if (img.pixels.size() != std::size_t(img.width) * img.height)
        throw argument_error("save_image: pixel buffer does not match dimensions");
    if (fmt == ImageFormat::pgm)
        save_pgm(img, path);
    else
        save_png(img, path);
}

/// Infers pgm/png from the file extension.
inline ImageFormat format_for_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") return ImageFormat::pgm;
    if (ext == ".png") return ImageFormat::png;
    throw argument_error("unsupported image extension '" + ext + "' (use .pgm or .png)");
}

// --------------------------------------------------------------------------
// Label images
// --------------------------------------------------------------------------

/// Intensity used to render class q of Q in a label image.
inline std::uint8_t label_intensity(int q, int Q) {
    if (Q < 2) throw argument_error("label_intensity: need Q >= 2");
    if (q < 1 || q > Q) throw argument_error("label_intensity: class out of range");
    return static_cast<std::uint8_t>(std::lround(double(q - 1) * 255.0 / double(Q - 1)));
}

/// Writes labels as a PGM plus a JSON sidecar <path>.json with the
/// label-to-intensity map.  When render_violations is set, violated pixels
/// are drawn as a 128 +/- 32 checker pattern instead of their class.
inline void save_labels(const std::vector<std::uint8_t>& labels, std::uint32_t width, std::uint32_t height, int Q,
                        const std::filesystem::path& path, const std::vector<std::size_t>& violations = {},
                        bool render_violations = false) {
    if (labels.size() != std::size_t(width) * height) throw argument_error("save_labels: size mismatch");
    GrayImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) img.pixels[i] = label_intensity(labels[i], Q);
    if (render_violations) {
        for (std::size_t i : violations) {
            const std::uint32_t x = static_cast<std::uint32_t>(i % width), y = static_cast<std::uint32_t>(i / width);
            img.pixels[i] = static_cast<std::uint8_t>(((x + y) & 1) ? 128 + 32 : 128 - 32);
        }
    }
    save_image(img, path, format_for_path(path));

    nlohmann::json sidecar;
    sidecar["q"] = Q;
    auto map = nlohmann::json::array();
    for (int q = 1; q <= Q; ++q) map.push_back(int(label_intensity(q, Q)));
    sidecar["map"] = map;
    const std::filesystem::path jpath = path.string() + ".json";
    std::ofstream os(jpath);
    if (!os) throw io_error("cannot open '" + jpath.string() + "' for writing");
    os << sidecar.dump(2) << '\n';
}

/// Reads a label image back into class labels 1..Q.  Uses the JSON sidecar
/// when present; otherwise the distinct intensities, ascending, become
/// classes 1..K.
inline std::pair<std::vector<std::uint8_t>, int> load_labels(const std::filesystem::path& path) {
    const GrayImage img = load_image(path, format_for_path(path));
    std::vector<int> map;
    int Q = 0;
    const std::filesystem::path jpath = path.string() + ".json";
    if (std::filesystem::exists(jpath)) {
        std::ifstream is(jpath);
        if (!is) throw io_error("cannot open '" + jpath.string() + "' for reading");
        nlohmann::json j;
        try {
            is >> j;
            Q = j.at("q").get<int>();
            for (const auto& v : j.at("map")) map.push_back(v.get<int>());
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(jpath.string() + ": " + e.what());
        }
        if (Q < 2 || map.size() != std::size_t(Q)) throw parse_error(jpath.string() + ": inconsistent label map");
    } else {
        std::vector<std::uint8_t> distinct(img.pixels.begin(), img.pixels.end());
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        for (auto v : distinct) map.push_back(v);
        Q = static_cast<int>(map.size());
        if (Q < 1) throw parse_error(path.string() + ": empty label image");
    }

    std::vector<std::uint8_t> labels(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        // nearest map entry; exact for files we wrote ourselves
        int bestq = 1;
        int bestd = 256;
        for (int q = 1; q <= Q; ++q) {
            const int d = std::abs(int(img.pixels[i]) - map[std::size_t(q - 1)]);
            if (d < bestd) {
                bestd = d;
                bestq = q;
            }
        }
        labels[i] = static_cast<std::uint8_t>(bestq);
    }
    return {labels, Q};
}

// --------------------------------------------------------------------------
// Synthetic scenes
// --------------------------------------------------------------------------

struct SyntheticSpec {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    int q = 2;

    enum class Pattern { checkerboard, blobs } pattern = Pattern::checkerboard;
    std::uint32_t tile = 8; // checkerboard tile side

    std::vector<double> class_means; // one mean per class

    NoiseKind noise = NoiseKind::gaussian;
    double sigma = 25.0;         // gaussian
    double weibull_lambda = 1.0; // weibull speckle shape/scale
    double weibull_k = 1.5;

    std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::uint8_t> pattern_labels(const SyntheticSpec& s) {
    std::vector<std::uint8_t> cls(std::size_t(s.width) * s.height);
    if (s.pattern == SyntheticSpec::Pattern::checkerboard) {
        const std::uint32_t per_row = (s.width + s.tile - 1) / s.tile;
        for (std::uint32_t y = 0; y < s.height; ++y)
            for (std::uint32_t x = 0; x < s.width; ++x) {
                const std::uint32_t tid = (y / s.tile) * per_row + (x / s.tile);
                cls[std::size_t(y) * s.width + x] = static_cast<std::uint8_t>(tid % std::uint32_t(s.q) + 1);
            }
        return cls;
    }
    // blobs: mid background (2), one bright target disk (3), one dark shadow
    // disk (1); target wins where they overlap.
    const double m = std::min(s.width, s.height);
    const double tx = 0.38 * s.width, ty = 0.45 * s.height, tr = 0.18 * m;
    const double sx = 0.62 * s.width, sy = 0.58 * s.height, sr = 0.15 * m;
    for (std::uint32_t y = 0; y < s.height; ++y)
        for (std::uint32_t x = 0; x < s.width; ++x) {
            std::uint8_t c = 2;
            const double dt = (x - tx) * (x - tx) + (y - ty) * (y - ty);
            const double ds = (x - sx) * (x - sx) + (y - sy) * (y - sy);
            if (dt <= tr * tr)
                c = 3;
            else if (ds <= sr * sr)
                c = 1;
            cls[std::size_t(y) * s.width + x] = c;
        }
    return cls;
}

} // namespace detail

/// Builds the scene, applies per-pixel noise (row-major, one draw per pixel)
/// and stores the clean class labels as ground truth.
inline GrayImage generate(const SyntheticSpec& s) {
    if (s.width == 0 || s.height == 0) throw argument_error("generate: empty image");
    if (s.q < 2 || s.q > 255) throw argument_error("generate: q must be in [2, 255]");
    if (s.pattern == SyntheticSpec::Pattern::blobs && s.q != 3)
        throw argument_error("generate: blobs pattern requires q == 3");
    if (s.pattern == SyntheticSpec::Pattern::checkerboard) {
        if (s.tile == 0) throw argument_error("generate: tile must be positive");
        if (s.tile > s.width || s.tile > s.height)
            throw argument_error("generate: tile " + std::to_string(s.tile) + " exceeds image dimensions");
    }
    if (s.class_means.size() != std::size_t(s.q))
        throw argument_error("generate: need exactly one class mean per class");
    for (std::size_t a = 0; a < s.class_means.size(); ++a)
        for (std::size_t b = a + 1; b < s.class_means.size(); ++b)
            if (s.class_means[a] == s.class_means[b])
                throw argument_error("generate: class means must be distinct");
    if (s.noise == NoiseKind::gaussian && s.sigma < 0) throw argument_error("generate: sigma must be >= 0");
    if (s.noise == NoiseKind::weibull && (s.weibull_lambda <= 0 || s.weibull_k <= 0))
        throw argument_error("generate: weibull lambda and k must be > 0");

    GrayImage img;
    img.width = s.width;
    img.height = s.height;
    img.truth = detail::pattern_labels(s);
    img.truth_q = s.q;
    img.pixels.resize(img.truth.size());

    Rng rng(s.seed);
    const double wmean = s.weibull_lambda * std::tgamma(1.0 + 1.0 / s.weibull_k);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double mean = s.class_means[std::size_t(img.truth[i] - 1)];
        double v;
        if (s.noise == NoiseKind::gaussian) {
            v = mean + s.sigma * rng.gaussian();
        } else {
            v = mean * rng.weibull(s.weibull_lambda, s.weibull_k) / wmean; // unit-mean speckle
        }
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
    }
    return img;
}

/// Evenly spaced default means 0..255 for Q classes.
inline std::vector<double> default_class_means(int Q) {
    if (Q < 2) throw argument_error("default_class_means: need Q >= 2");
    std::vector<double> m(static_cast<std::size_t>(Q));
    for (int q = 0; q < Q; ++q) m[std::size_t(q)] = std::round(double(q) * 255.0 / double(Q - 1));
    return m;
}

// --------------------------------------------------------------------------
// Accuracy
// --------------------------------------------------------------------------

struct AccuracyResult {
    double value = 0.0;
    std::vector<int> mapping; // mapping[p-1] = ground-truth class matched to predicted class p
};

/// Label identity is arbitrary after unsupervised fitting, so score the best
/// injective relabeling: max over permutations (Q <= 8) of the fraction of
/// pixels where mapped prediction equals ground truth.
inline AccuracyResult accuracy(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size()) throw argument_error("accuracy: size mismatch");
    if (pred.empty()) throw argument_error("accuracy: empty labeling");
    int Q = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 1 || truth[i] < 1) throw argument_error("accuracy: labels must be >= 1");
        Q = std::max({Q, int(pred[i]), int(truth[i])});
    }
    if (Q > 8) throw capacity_error("accuracy: more than 8 classes");

    std::vector<std::size_t> conf(std::size_t(Q) * std::size_t(Q), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) conf[std::size_t(pred[i] - 1) * Q + (truth[i] - 1)]++;

    std::vector<int> perm(static_cast<std::size_t>(Q));
    std::iota(perm.begin(), perm.end(), 1);
    AccuracyResult best;
    best.value = -1.0;
    do {
        std::size_t hits = 0;
        for (int p = 1; p <= Q; ++p) hits += conf[std::size_t(p - 1) * Q + (perm[std::size_t(p - 1)] - 1)];
        const double v = double(hits) / double(pred.size());
        if (v > best.value) {
            best.value = v;
            best.mapping = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

} // namespace qseg
