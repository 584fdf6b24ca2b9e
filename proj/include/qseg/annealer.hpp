#pragma once

/// Multi-restart single-flip Metropolis annealer.  Each sample is an
/// independent anneal on its own RNG stream derived from (seed, sample
/// index), so runs are reproducible and samples may be computed in parallel
/// with results identical to sequential execution.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "qubo.hpp"
#include "rng.hpp"

namespace qseg {

struct AnnealSchedule {
    std::uint32_t n_sweeps = 1000; // one sweep proposes one flip per variable
    double beta_start = 0.1;
    double beta_end = 10.0;
    enum class Interp { geometric, linear } interpolation = Interp::geometric;

    void validate() const {
        if (n_sweeps < 1) throw argument_error("AnnealSchedule: n_sweeps must be >= 1");
        if (!(beta_start > 0.0) || !(beta_end > 0.0) || !std::isfinite(beta_start) || !std::isfinite(beta_end))
            throw argument_error("AnnealSchedule: betas must be positive finite");
        if (!(beta_start < beta_end)) throw argument_error("AnnealSchedule: beta_start must be < beta_end");
    }

    double beta_at(std::uint32_t sweep) const {
        if (n_sweeps <= 1) return beta_end;
        const double t = double(sweep) / double(n_sweeps - 1);
        if (interpolation == Interp::geometric) return beta_start * std::pow(beta_end / beta_start, t);
        return beta_start + (beta_end - beta_start) * t;
    }
};

/// Beta range from the coefficient magnitudes: hottest temperature resolves
/// the largest possible single-flip move (max local-field bound), coldest
/// the smallest coupling.  A coupling-free or all-zero problem falls back to
/// fixed ranges.
inline AnnealSchedule default_schedule(const Qubo& q) {
    constexpr double eps = 1e-10;
    double bound_max = 0.0;
    std::vector<double> bound(q.n_vars(), 0.0);
    for (const auto& [i, c] : q.linear()) bound[i] += std::abs(c);
    double qmin = 0.0;
    for (const auto& [ij, c] : q.quadratic()) {
        const double a = std::abs(c);
        bound[ij.first] += a;
        bound[ij.second] += a;
        if (a > 0.0 && (qmin == 0.0 || a < qmin)) qmin = a;
    }
    for (double b : bound) bound_max = std::max(bound_max, b);

    AnnealSchedule s;
    if (bound_max == 0.0) { // nothing to optimize; fixed mild schedule
        s.beta_start = 0.1;
        s.beta_end = 10.0;
        return s;
    }
    s.beta_start = 1.0 / bound_max;
    s.beta_end = std::min(1e6, 1.0 / std::max(qmin, eps));
    if (s.beta_end <= s.beta_start) s.beta_end = s.beta_start * 1e3;
    return s;
}

struct SamplerConfig {
    std::size_t n_samples = 100;
    AnnealSchedule schedule;
    std::uint64_t seed = 1;
    unsigned threads = 0; // 0 = hardware concurrency
};

namespace detail {

/// Flattened coupling structure for the inner loop.
struct Couplings {
    std::vector<double> lin;
    std::vector<std::uint32_t> off; // n+1 row offsets
    std::vector<std::uint32_t> idx;
    std::vector<double> val;

    explicit Couplings(const Qubo& q) {
        const std::uint32_t n = q.n_vars();
        lin.assign(n, 0.0);
        for (const auto& [i, c] : q.linear()) lin[i] = c;
        std::vector<std::uint32_t> deg(n, 0);
        for (const auto& [ij, c] : q.quadratic()) {
            ++deg[ij.first];
            ++deg[ij.second];
        }
        off.assign(n + 1, 0);
        for (std::uint32_t i = 0; i < n; ++i) off[i + 1] = off[i] + deg[i];
        idx.resize(off[n]);
        val.resize(off[n]);
        std::vector<std::uint32_t> cur(off.begin(), off.end() - 1);
        for (const auto& [ij, c] : q.quadratic()) {
            idx[cur[ij.first]] = ij.second;
            val[cur[ij.first]++] = c;
            idx[cur[ij.second]] = ij.first;
            val[cur[ij.second]++] = c;
        }
    }
};

/// exp(-t) for t in (0, 44], accurate to ~3e-5 relative.  A fixed polynomial
/// instead of libm keeps acceptance decisions identical across platforms and
/// libm versions, and it is what the proposal loop mostly spends time on.
inline double exp_neg(double t) {
    const double y = t * 1.4426950408889634; // log2(e); y in (0, 64)
    const int n = static_cast<int>(y);
    const double r = (y - n) * 0.6931471805599453; // ln 2; r in [0, ln 2)
    // exp(-r), Taylor to r^6 (next term < 2e-5 relative on this range)
    const double p =
        1.0 + r * (-1.0 + r * (0.5 + r * (-1.0 / 6 + r * (1.0 / 24 + r * (-1.0 / 120 + r * (1.0 / 720))))));
    std::uint64_t e = std::uint64_t(1023 - n) << 52; // 2^-n
    double scale;
    std::memcpy(&scale, &e, sizeof scale);
    return p * scale;
}

inline Sample anneal_one(const Qubo& q, const Couplings& cp, const AnnealSchedule& sched, std::uint64_t seed,
                         std::size_t sample_index) {
    const std::uint32_t n = q.n_vars();
    Rng rng = rng_stream(seed, sample_index);

    std::vector<std::uint8_t> bits(n);
    for (auto& b : bits) b = rng.bit() ? 1 : 0;

    // local fields h_i = lin_i + sum_j c_ij * z_j, maintained incrementally
    std::vector<double> h(cp.lin);
    for (std::uint32_t i = 0; i < n; ++i)
        if (bits[i])
            for (std::uint32_t t = cp.off[i]; t < cp.off[i + 1]; ++t) h[cp.idx[t]] += cp.val[t];

    std::uint8_t* const b = bits.data();
    double* const hp = h.data();
    const std::uint32_t* const off = cp.off.data();
    const std::uint32_t* const idx = cp.idx.data();
    const double* const val = cp.val.data();

    for (std::uint32_t sweep = 0; sweep < sched.n_sweeps; ++sweep) {
        const double beta = sched.beta_at(sweep);
        for (std::uint32_t i = 0; i < n; ++i) {
            const double dE = b[i] ? -hp[i] : hp[i];
            if (dE > 0.0) {
                const double t = beta * dE;
                if (t > 44.0) continue; // exp(-t) below any representable draw
                // t <= 1e-4: acceptance >= 1 - 1e-4, not worth a draw
                if (t > 1e-4 && rng.uniform() >= exp_neg(t)) continue;
            }
            // flip
            const double w = b[i] ? -1.0 : 1.0;
            b[i] ^= 1;
            for (std::uint32_t t = off[i]; t < off[i + 1]; ++t) hp[idx[t]] += w * val[t];
        }
    }

    Sample s;
    s.energy = q.energy(bits); // canonical recomputation, not the running sum
    s.bits = std::move(bits);
    return s;
}

/// Runs fn(k) for k in [0, count), possibly on several threads.  Each k is
/// independent, so the result does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t k = next.fetch_add(1); k < count; k = next.fetch_add(1)) fn(k);
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

inline SampleSet sample(const Qubo& q, const SamplerConfig& cfg) {
    if (cfg.n_samples == 0) throw argument_error("sample: n_samples must be >= 1");
    cfg.schedule.validate();

    const detail::Couplings cp(q);
    SampleSet out;
    out.rng_seed = cfg.seed;
    out.samples.resize(cfg.n_samples);
    detail::parallel_for(cfg.n_samples, cfg.threads,
                         [&](std::size_t k) { out.samples[k] = detail::anneal_one(q, cp, cfg.schedule, cfg.seed, k); });
    return out;
}

} // namespace qseg
