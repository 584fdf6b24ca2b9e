#pragma once

/// Sparse QUBO container plus exact evaluation, exhaustive solving and a
/// plain-text serialization format.
///
/// Energies are evaluated in one fixed order -- offset, then linear terms by
/// ascending variable index, then quadratic terms by ascending (i, j) -- so
/// repeated evaluations of the same assignment are bit-identical.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace qseg {

struct Sample {
    std::vector<std::uint8_t> bits;
    double energy = 0.0;
};

struct SampleSet {
    std::vector<Sample> samples;
    std::uint64_t rng_seed = 0;

    /// Lowest-energy sample; ties go to the lowest index.
    const Sample& best() const {
        if (samples.empty()) throw argument_error("SampleSet::best: empty sample set");
        const Sample* b = &samples[0];
        for (const Sample& s : samples)
            if (s.energy < b->energy) b = &s;
        return *b;
    }
};

class Qubo {
  public:
    using QuadKey = std::pair<std::uint32_t, std::uint32_t>;

    explicit Qubo(std::uint32_t n_vars) : n_vars_(n_vars) {
        if (n_vars == 0) throw argument_error("Qubo: n_vars must be positive");
    }

    std::uint32_t n_vars() const { return n_vars_; }
    double offset() const { return offset_; }
    void set_offset(double v) { offset_ = v; }

    /// Accumulates onto any existing coefficient.
    void add_linear(std::uint32_t i, double c) {
        check_var(i);
        linear_[i] += c;
    }

    /// Accumulates; (i, j) and (j, i) refer to the same upper-triangular
    /// entry.  Diagonal terms are rejected: z*z == z belongs in linear.
    void add_quadratic(std::uint32_t i, std::uint32_t j, double c) {
        check_var(i);
        check_var(j);
        if (i == j) throw argument_error("Qubo::add_quadratic: diagonal coefficient (use add_linear)");
        if (i > j) std::swap(i, j);
        quad_[{i, j}] += c;
    }

    const std::map<std::uint32_t, double>& linear() const { return linear_; }
    const std::map<QuadKey, double>& quadratic() const { return quad_; }

    double energy(const std::vector<std::uint8_t>& bits) const {
        if (bits.size() != n_vars_)
            throw argument_error("Qubo::energy: assignment length " + std::to_string(bits.size()) +
                                 " != n_vars " + std::to_string(n_vars_));
        double acc = offset_;
        for (const auto& [i, c] : linear_)
            if (bits[i]) acc += c;
        for (const auto& [ij, c] : quad_)
            if (bits[ij.first] && bits[ij.second]) acc += c;
        return acc;
    }

  private:
    void check_var(std::uint32_t i) const {
        if (i >= n_vars_)
            throw argument_error("Qubo: variable index " + std::to_string(i) + " out of range [0, " +
                                 std::to_string(n_vars_) + ")");
    }

    std::uint32_t n_vars_;
    double offset_ = 0.0;
    std::map<std::uint32_t, double> linear_;
    std::map<QuadKey, double> quad_;
};

/// Exhaustive enumeration.  Returns *all* global minimizers, in ascending
/// order of the assignment read as a little-endian integer.  Refuses more
/// than 24 variables.
inline SampleSet brute_force_solve(const Qubo& q) {
    const std::uint32_t n = q.n_vars();
    if (n > 24)
        throw capacity_error("brute_force_solve: " + std::to_string(n) + " variables exceeds the 24-variable cap");

    // Snapshot coefficients in canonical order so per-assignment evaluation
    // reproduces Qubo::energy bit-exactly.
    std::vector<std::pair<std::uint32_t, double>> lin(q.linear().begin(), q.linear().end());
    struct QTerm {
        std::uint32_t i, j;
        double c;
    };
    std::vector<QTerm> quad;
    quad.reserve(q.quadratic().size());
    for (const auto& [ij, c] : q.quadratic()) quad.push_back({ij.first, ij.second, c});

    SampleSet out;
    double best = 0.0;
    const std::uint64_t total = 1ULL << n;
    for (std::uint64_t x = 0; x < total; ++x) {
        double e = q.offset();
        for (const auto& [i, c] : lin)
            if (x >> i & 1) e += c;
        for (const auto& t : quad)
            if ((x >> t.i & 1) && (x >> t.j & 1)) e += t.c;
        if (out.samples.empty() || e < best) {
            best = e;
            out.samples.clear();
        }
        if (e == best) {
            Sample s;
            s.bits.resize(n);
            for (std::uint32_t i = 0; i < n; ++i) s.bits[i] = static_cast<std::uint8_t>(x >> i & 1);
            s.energy = e;
            out.samples.push_back(std::move(s));
        }
    }
    return out;
}

namespace detail {

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw io_error("format_double: conversion failed");
    return std::string(buf, p);
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
    double v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw parse_error("qubo file line " + std::to_string(line_no) + ": bad real '" + tok + "'");
    return v;
}

inline std::uint64_t parse_uint(const std::string& tok, std::size_t line_no) {
    std::uint64_t v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw parse_error("qubo file line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
    return v;
}

} // namespace detail

/// Text format, one term per line:
///   p qubo <n_vars> <n_linear> <n_quadratic> <offset>
///   l <i> <coeff>
///   q <i> <j> <coeff>
/// Coefficients are printed in shortest round-trip form, so a load of a save
/// reproduces every stored value exactly.
inline void write_qubo(std::ostream& os, const Qubo& q) {
    os << "p qubo " << q.n_vars() << ' ' << q.linear().size() << ' ' << q.quadratic().size() << ' '
       << detail::format_double(q.offset()) << '\n';
    for (const auto& [i, c] : q.linear()) os << "l " << i << ' ' << detail::format_double(c) << '\n';
    for (const auto& [ij, c] : q.quadratic())
        os << "q " << ij.first << ' ' << ij.second << ' ' << detail::format_double(c) << '\n';
}

inline Qubo read_qubo(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t n_vars = 0, n_lin = 0, n_quad = 0;
    double offset = 0.0;
    bool have_header = false;
    std::uint64_t seen_lin = 0, seen_quad = 0;
    Qubo q(1);

    auto tokens_of = [&](const std::string& s) {
        std::istringstream ts(s);
        std::vector<std::string> toks;
        for (std::string t; ts >> t;) toks.push_back(t);
        return toks;
    };

    while (std::getline(is, line)) {
        ++line_no;
        auto toks = tokens_of(line);
        if (toks.empty()) continue;
        if (toks[0] == "c") continue; // comment
        if (toks[0] == "p") {
            if (have_header) throw parse_error("qubo file line " + std::to_string(line_no) + ": duplicate header");
            if (toks.size() != 6 || toks[1] != "qubo")
                throw parse_error("qubo file line " + std::to_string(line_no) + ": malformed header");
            n_vars = detail::parse_uint(toks[2], line_no);
            n_lin = detail::parse_uint(toks[3], line_no);
            n_quad = detail::parse_uint(toks[4], line_no);
            offset = detail::parse_double(toks[5], line_no);
            if (n_vars == 0 || n_vars > 0xFFFFFFFFULL)
                throw parse_error("qubo file line " + std::to_string(line_no) + ": bad n_vars");
            q = Qubo(static_cast<std::uint32_t>(n_vars));
            q.set_offset(offset);
            have_header = true;
            continue;
        }
        if (!have_header) throw parse_error("qubo file line " + std::to_string(line_no) + ": term before header");
        if (toks[0] == "l") {
            if (toks.size() != 3) throw parse_error("qubo file line " + std::to_string(line_no) + ": malformed l line");
            const auto i = detail::parse_uint(toks[1], line_no);
            if (i >= n_vars) throw parse_error("qubo file line " + std::to_string(line_no) + ": index out of range");
            q.add_linear(static_cast<std::uint32_t>(i), detail::parse_double(toks[2], line_no));
            ++seen_lin;
        } else if (toks[0] == "q") {
            if (toks.size() != 4) throw parse_error("qubo file line " + std::to_string(line_no) + ": malformed q line");
            const auto i = detail::parse_uint(toks[1], line_no);
            const auto j = detail::parse_uint(toks[2], line_no);
            if (i >= n_vars || j >= n_vars)
                throw parse_error("qubo file line " + std::to_string(line_no) + ": index out of range");
            if (i == j) throw parse_error("qubo file line " + std::to_string(line_no) + ": diagonal term");
            q.add_quadratic(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                            detail::parse_double(toks[3], line_no));
            ++seen_quad;
        } else {
            throw parse_error("qubo file line " + std::to_string(line_no) + ": unknown record '" + toks[0] + "'");
        }
    }
    if (!have_header) throw parse_error("qubo file: missing header");
    if (seen_lin != n_lin || seen_quad != n_quad)
        throw parse_error("qubo file: header declares " + std::to_string(n_lin) + "/" + std::to_string(n_quad) +
                          " terms, found " + std::to_string(seen_lin) + "/" + std::to_string(seen_quad));
    return q;
}

inline void save_qubo(const Qubo& q, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    write_qubo(os, q);
    if (!os.flush()) throw io_error("write to '" + path.string() + "' failed");
}

inline Qubo load_qubo(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open '" + path.string() + "' for reading");
    return read_qubo(is);
}

} // namespace qseg
