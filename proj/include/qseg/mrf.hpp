#pragma once

/// Compiles a Potts-style MRF segmentation objective over pixel intensities
/// into a QUBO, in two encodings:
///
///  * binary: one bit per pixel plus two ancilla bits (z_a forced to 1 and
///    z_b to 0).  Cutting the edge between a pixel and an ancilla earns that
///    ancilla's class log-likelihood, so each pixel prefers the class it is
///    most likely under.
///  * one_hot: Q bits per pixel plus one ancilla z_alpha forced to 1; a
///    one-hot constraint Hamiltonian keeps exactly one class bit set per
///    pixel.
///
/// Class likelihoods are normalized per pixel (after the 1e-10 floor) before
/// entering the unary terms; for the one-hot scheme the resulting constant is
/// exposed as VarLayout::energy_offset, so for any valid one-hot assignment
/// with z_alpha = 1:  qubo.energy(bits) - energy_offset == mrf_energy(decode).

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "image.hpp"
#include "noise.hpp"
#include "qubo.hpp"

namespace qseg {

enum class Connectivity { four, eight };

struct NeighborSystem {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Connectivity connectivity = Connectivity::four;
    // Each undirected edge exactly once, (i, j) with i < j, row-major order.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;

    std::size_t n_pixels() const { return std::size_t(width) * height; }
};

inline NeighborSystem make_neighbors(std::uint32_t width, std::uint32_t height, Connectivity c) {
    if (width == 0 || height == 0) throw argument_error("make_neighbors: empty grid");
    NeighborSystem ns;
    ns.width = width;
    ns.height = height;
    ns.connectivity = c;
    for (std::uint32_t y = 0; y < height; ++y)
        for (std::uint32_t x = 0; x < width; ++x) {
            const std::uint32_t i = y * width + x;
            if (x + 1 < width) ns.edges.emplace_back(i, i + 1);
            if (y + 1 < height) ns.edges.emplace_back(i, i + width);
            if (c == Connectivity::eight && y + 1 < height) {
                if (x + 1 < width) ns.edges.emplace_back(i, i + width + 1);
                if (x > 0) ns.edges.emplace_back(i, i + width - 1);
            }
        }
    return ns;
}

struct MrfWeights {
    double lambda_p = 0.5; // pairwise smoothing
    double lambda_a = 0.0; // ancilla pinning
    double lambda_oh = 0.0; // one-hot constraint (one_hot scheme only)
};

/// Paper-bound multipliers with a 5% safety margin:
///   lambda_a  = 1.05 * N*(Q-1)*ln(Q)   (Q=2 reduces to the binary bound -N*ln(1/2))
///   lambda_oh = max(1.05 * lambda_p/2, 1.0)
inline MrfWeights auto_weights(std::size_t n_pixels, int Q, double lambda_p) {
    if (n_pixels == 0) throw argument_error("auto_weights: empty image");
    if (Q < 2) throw argument_error("auto_weights: Q must be >= 2");
    if (!(lambda_p >= 0.0) || !std::isfinite(lambda_p)) throw argument_error("auto_weights: lambda_p must be >= 0");
    MrfWeights w;
    w.lambda_p = lambda_p;
    w.lambda_a = 1.05 * double(n_pixels) * double(Q - 1) * std::log(double(Q));
    w.lambda_oh = std::max(1.05 * lambda_p / 2.0, 1.0);
    return w;
}

enum class Scheme { binary, one_hot };

inline std::string to_string(Scheme s) { return s == Scheme::binary ? "binary" : "one_hot"; }

struct VarLayout {
    Scheme scheme = Scheme::one_hot;
    std::uint32_t n_pixels = 0;
    int q = 2;
    std::uint32_t n_vars = 0;
    std::uint32_t ancilla_a = 0; // binary: z_a (pinned 1); one_hot: z_alpha (pinned 1)
    std::uint32_t ancilla_b = 0; // binary: z_b (pinned 0); unused for one_hot
    // one_hot: subtract from a valid assignment's QUBO energy to get the
    // raw-likelihood MRF energy of its decoding.  binary: -lambda_a, the
    // ancilla term's value at (z_a, z_b) = (1, 0).
    double energy_offset = 0.0;

    /// Bit index of (pixel, class); classes are 1..Q.  one_hot scheme only.
    std::uint32_t var(std::uint32_t pixel, int cls) const {
        return pixel * std::uint32_t(q) + std::uint32_t(cls - 1);
    }
};

struct Labeling {
    std::vector<std::uint8_t> labels;     // per pixel, 1..Q
    std::vector<std::size_t> violations;  // pixels whose one-hot block was invalid, ascending
};

struct BuildResult {
    Qubo qubo;
    VarLayout layout;
};

namespace detail {

inline void check_weights(const MrfWeights& w, Scheme scheme) {
    if (!std::isfinite(w.lambda_p) || w.lambda_p < 0.0)
        throw argument_error("MrfWeights: lambda_p must be finite and >= 0");
    if (!std::isfinite(w.lambda_a) || w.lambda_a <= 0.0)
        throw argument_error("MrfWeights: lambda_a must be finite and > 0");
    if (scheme == Scheme::one_hot && (!std::isfinite(w.lambda_oh) || w.lambda_oh <= 0.0))
        throw argument_error("MrfWeights: lambda_oh must be finite and > 0");
}

/// Per-pixel floored likelihoods for every class, plus their sum.
inline void floored_row(const NoiseModel& m, double x, std::size_t i, std::vector<double>& row, double& sum) {
    const std::size_t Q = m.n_classes();
    sum = 0.0;
    for (std::size_t q = 1; q <= Q; ++q) {
        const double p = likelihood(m, x, q);
        if (!std::isfinite(p) || p < 0.0)
            throw model_error("pixel " + std::to_string(i) + ": invalid likelihood for class " + std::to_string(q));
        row[q - 1] = std::max(p, kProbFloor);
        sum += row[q - 1];
    }
}

} // namespace detail

/// Two-class encoding: variables 0..N-1 are pixel bits, N is z_a, N+1 is z_b.
inline BuildResult build_binary(const GrayImage& img, const NoiseModel& model, const NeighborSystem& nbrs,
                                const MrfWeights& w) {
    if (model.n_classes() != 2) throw argument_error("build_binary: model must have exactly 2 classes");
    model.validate();
    detail::check_weights(w, Scheme::binary);
    const std::size_t N = img.size();
    if (N == 0) throw argument_error("build_binary: empty image");
    if (nbrs.n_pixels() != N) throw argument_error("build_binary: neighbor system does not match image");

    VarLayout layout;
    layout.scheme = Scheme::binary;
    layout.n_pixels = static_cast<std::uint32_t>(N);
    layout.q = 2;
    layout.n_vars = static_cast<std::uint32_t>(N + 2);
    layout.ancilla_a = static_cast<std::uint32_t>(N);
    layout.ancilla_b = static_cast<std::uint32_t>(N + 1);
    layout.energy_offset = -w.lambda_a;

    Qubo q(layout.n_vars);
    const std::uint32_t a = layout.ancilla_a, b = layout.ancilla_b;

    // Unary: delta(z_i, z_a)*log p(x|2) + delta(z_i, z_b)*log p(x|1), with
    // delta(u, v) = u + v - 2uv and p normalized so the two sum to 1.
    std::vector<double> row(2);
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double p1 = likelihood(model, img.pixels[i], 1);
        const double p2 = likelihood(model, img.pixels[i], 2);
        if (!std::isfinite(p1) || !std::isfinite(p2) || p1 < 0.0 || p2 < 0.0)
            throw model_error("pixel " + std::to_string(i) + ": invalid likelihood");
        if (p1 == 0.0 && p2 == 0.0)
            throw model_error("pixel " + std::to_string(i) + ": zero likelihood under both classes");
        detail::floored_row(model, img.pixels[i], i, row, sum);
        const double log_obj = std::log(row[1] / sum); // class 2 = object = z_a side
        const double log_bg = std::log(row[0] / sum);  // class 1 = background = z_b side
        const auto pi = static_cast<std::uint32_t>(i);
        q.add_linear(pi, log_obj);
        q.add_linear(a, log_obj);
        q.add_quadratic(pi, a, -2.0 * log_obj);
        q.add_linear(pi, log_bg);
        q.add_linear(b, log_bg);
        q.add_quadratic(pi, b, -2.0 * log_bg);
    }

    // Pairwise: lambda_p * delta(z_i, z_j) per undirected edge.
    for (const auto& [i, j] : nbrs.edges) {
        q.add_linear(i, w.lambda_p);
        q.add_linear(j, w.lambda_p);
        q.add_quadratic(i, j, -2.0 * w.lambda_p);
    }

    // Ancilla: lambda_a * (z_b - z_a) pins (z_a, z_b) = (1, 0).
    q.add_linear(b, w.lambda_a);
    q.add_linear(a, -w.lambda_a);

    return {std::move(q), layout};
}

/// One-hot encoding: bit (i, q) at index i*Q + q-1, z_alpha at N*Q.
inline BuildResult build_qclass(const GrayImage& img, const NoiseModel& model, const NeighborSystem& nbrs,
                                const MrfWeights& w) {
    const int Q = static_cast<int>(model.n_classes());
    if (Q < 2) throw argument_error("build_qclass: Q must be >= 2");
    model.validate();
    detail::check_weights(w, Scheme::one_hot);
    const std::size_t N = img.size();
    if (N == 0) throw argument_error("build_qclass: empty image");
    if (nbrs.n_pixels() != N) throw argument_error("build_qclass: neighbor system does not match image");

    VarLayout layout;
    layout.scheme = Scheme::one_hot;
    layout.n_pixels = static_cast<std::uint32_t>(N);
    layout.q = Q;
    layout.n_vars = static_cast<std::uint32_t>(N * std::size_t(Q) + 1);
    layout.ancilla_a = static_cast<std::uint32_t>(N * std::size_t(Q));
    layout.ancilla_b = layout.n_vars; // none
    Qubo qb(layout.n_vars);
    const std::uint32_t alpha = layout.ancilla_a;

    // Unary: sum_iq delta(z_(i,q), z_alpha) * log p~(q | x_i), with p~ the
    // per-pixel normalized, floored likelihood.
    double const_logs = 0.0;   // sum of all log p~ entries
    double const_norms = 0.0;  // sum_i log(sum_q floored p)
    std::vector<double> row(static_cast<std::size_t>(Q));
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        detail::floored_row(model, img.pixels[i], i, row, sum);
        const_norms += std::log(sum);
        for (int c = 1; c <= Q; ++c) {
            const double lp = std::log(row[std::size_t(c - 1)] / sum);
            const_logs += lp;
            const std::uint32_t v = layout.var(static_cast<std::uint32_t>(i), c);
            qb.add_linear(v, lp);
            qb.add_linear(alpha, lp);
            qb.add_quadratic(v, alpha, -2.0 * lp);
        }
    }

    // One-hot constraint: per pixel, -sum_q z_q + 2*sum_{r<q} z_q z_r, scaled
    // by lambda_oh; minimum -1 exactly at one-hot blocks.
    for (std::size_t i = 0; i < N; ++i)
        for (int c = 1; c <= Q; ++c) {
            const std::uint32_t v = layout.var(static_cast<std::uint32_t>(i), c);
            qb.add_linear(v, -w.lambda_oh);
            for (int r = 1; r < c; ++r)
                qb.add_quadratic(v, layout.var(static_cast<std::uint32_t>(i), r), 2.0 * w.lambda_oh);
        }

    // Pairwise: lambda_p/2 * delta per class bit pair; a label disagreement
    // cuts two bits, costing exactly lambda_p per edge.
    for (const auto& [i, j] : nbrs.edges)
        for (int c = 1; c <= Q; ++c) {
            const std::uint32_t vi = layout.var(i, c), vj = layout.var(j, c);
            qb.add_linear(vi, w.lambda_p / 2.0);
            qb.add_linear(vj, w.lambda_p / 2.0);
            qb.add_quadratic(vi, vj, -w.lambda_p);
        }

    // Ancilla: lambda_a * (-z_alpha).
    qb.add_linear(alpha, -w.lambda_a);

    layout.energy_offset =
        const_logs + const_norms - double(N) * w.lambda_oh - w.lambda_a;
    return {std::move(qb), layout};
}

/// MRF energy of a labeling under raw (floored, unnormalized) likelihoods:
/// sum_i -log p(x_i | z_i) + lambda_p * (number of cut edges).
inline double mrf_energy(const std::vector<std::uint8_t>& labels, const GrayImage& img, const NoiseModel& model,
                         const NeighborSystem& nbrs, double lambda_p) {
    if (labels.size() != img.size()) throw argument_error("mrf_energy: labeling does not match image");
    const std::size_t Q = model.n_classes();
    double e = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || labels[i] > Q) throw argument_error("mrf_energy: label out of range");
        e += -std::log(std::max(likelihood(model, img.pixels[i], labels[i]), kProbFloor));
    }
    for (const auto& [i, j] : nbrs.edges)
        if (labels[i] != labels[j]) e += lambda_p;
    return e;
}

/// Recovers a labeling from raw bits.  Binary: bit set = object = class 2.
/// One-hot: a pixel whose block is not exactly one-hot is recorded as a
/// violation and assigned its lowest set class (class 1 if none).
inline Labeling decode(const std::vector<std::uint8_t>& bits, const VarLayout& layout) {
    if (bits.size() != layout.n_vars) throw argument_error("decode: bit vector does not match layout");
    Labeling out;
    out.labels.resize(layout.n_pixels);
    if (layout.scheme == Scheme::binary) {
        for (std::uint32_t i = 0; i < layout.n_pixels; ++i) out.labels[i] = bits[i] ? 2 : 1;
        return out;
    }
    for (std::uint32_t i = 0; i < layout.n_pixels; ++i) {
        int hot = 0, lowest = 0;
        for (int c = 1; c <= layout.q; ++c)
            if (bits[layout.var(i, c)]) {
                ++hot;
                if (lowest == 0) lowest = c;
            }
        if (hot == 1) {
            out.labels[i] = static_cast<std::uint8_t>(lowest);
        } else {
            out.violations.push_back(i);
            out.labels[i] = static_cast<std::uint8_t>(lowest == 0 ? 1 : lowest);
        }
    }
    return out;
}

/// One-pass nearest-neighbour completion: every violated pixel takes the
/// majority label of its non-violated neighbours (ties -> lowest class,
/// no such neighbour -> class 1).  The violation list is kept for reporting.
inline void repair(Labeling& lab, const NeighborSystem& nbrs) {
    if (lab.violations.empty()) return;
    if (lab.labels.size() != nbrs.n_pixels()) throw argument_error("repair: labeling does not match neighbor system");

    std::vector<std::uint8_t> violated(lab.labels.size(), 0);
    for (std::size_t i : lab.violations) violated[i] = 1;

    // adjacency once, from the edge list
    std::vector<std::vector<std::uint32_t>> adj(lab.labels.size());
    for (const auto& [i, j] : nbrs.edges) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }

    const std::vector<std::uint8_t> before = lab.labels;
    for (std::size_t i : lab.violations) {
        std::array<int, 256> count{};
        int best = 0;
        for (std::uint32_t n : adj[i])
            if (!violated[n]) {
                const int c = before[n];
                ++count[std::size_t(c)];
                if (count[std::size_t(c)] > (best ? count[std::size_t(best)] : 0) ||
                    (best && count[std::size_t(c)] == count[std::size_t(best)] && c < best))
                    best = c;
            }
        lab.labels[i] = static_cast<std::uint8_t>(best == 0 ? 1 : best);
    }
}

/// Inverse of decode for clean labelings (ancillas set to their pinned
/// values; exactly one class bit per pixel for one_hot).
inline std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& labels, const VarLayout& layout) {
    if (labels.size() != layout.n_pixels) throw argument_error("encode: labeling does not match layout");
    std::vector<std::uint8_t> bits(layout.n_vars, 0);
    if (layout.scheme == Scheme::binary) {
        for (std::uint32_t i = 0; i < layout.n_pixels; ++i) {
            if (labels[i] < 1 || labels[i] > 2) throw argument_error("encode: binary label out of range");
            bits[i] = labels[i] == 2;
        }
        bits[layout.ancilla_a] = 1;
        return bits;
    }
    for (std::uint32_t i = 0; i < layout.n_pixels; ++i) {
        if (labels[i] < 1 || labels[i] > layout.q) throw argument_error("encode: label out of range");
        bits[layout.var(i, labels[i])] = 1;
    }
    bits[layout.ancilla_a] = 1;
    return bits;
}

inline nlohmann::json layout_to_json(const VarLayout& l) {
    nlohmann::json j;
    j["scheme"] = to_string(l.scheme);
    j["n"] = l.n_pixels;
    j["q"] = l.q;
    j["n_vars"] = l.n_vars;
    if (l.scheme == Scheme::binary)
        j["ancilla"] = {l.ancilla_a, l.ancilla_b};
    else
        j["ancilla"] = {l.ancilla_a};
    j["energy_offset"] = l.energy_offset;
    return j;
}

/// Writes the QUBO text file plus a "<path>.layout.json" sidecar describing
/// the variable layout.
inline void dump_qubo_with_layout(const Qubo& q, const VarLayout& layout, const std::filesystem::path& path) {
    save_qubo(q, path);
    const std::filesystem::path jpath = path.string() + ".layout.json";
    std::ofstream os(jpath);
    if (!os) throw io_error("cannot open '" + jpath.string() + "' for writing");
    os << layout_to_json(layout).dump(2) << '\n';
}

} // namespace qseg
