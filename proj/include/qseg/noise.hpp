#pragma once

/// Per-class intensity noise models: Gaussian and Weibull densities, their
/// maximum-likelihood fits, and the negative-log-likelihood table consumed by
/// the QUBO builders.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace qseg {

/// Densities below this are floored before anyone takes a log.
inline constexpr double kProbFloor = 1e-10;
/// Lower bound kept on fitted Gaussian sigma so likelihoods stay finite.
inline constexpr double kSigmaFloor = 0.5;

enum class NoiseKind { gaussian, weibull };

inline std::string to_string(NoiseKind k) { return k == NoiseKind::gaussian ? "gaussian" : "weibull"; }

struct NoiseModel {
    NoiseKind kind = NoiseKind::gaussian;
    // One entry per class: gaussian (mu, sigma), weibull (lambda, k).
    struct ClassParams {
        double a = 0.0;
        double b = 1.0;
    };
    std::vector<ClassParams> params;

    std::size_t n_classes() const { return params.size(); }

    void validate() const {
        if (params.empty()) throw argument_error("NoiseModel: no classes");
        for (std::size_t q = 0; q < params.size(); ++q) {
            const auto& p = params[q];
            if (!std::isfinite(p.a) || !std::isfinite(p.b))
                throw argument_error("NoiseModel: non-finite parameter for class " + std::to_string(q + 1));
            if (kind == NoiseKind::gaussian) {
                if (p.b <= 0.0) throw argument_error("NoiseModel: sigma must be > 0 for class " + std::to_string(q + 1));
            } else {
                if (p.a <= 0.0 || p.b <= 0.0)
                    throw argument_error("NoiseModel: lambda and k must be > 0 for class " + std::to_string(q + 1));
            }
        }
    }
};

/// Raw pdf value, no floor; consumers clamp at kProbFloor before logs.
/// Classes are numbered 1..Q.
inline double likelihood(const NoiseModel& m, double x, std::size_t q) {
    if (q == 0 || q > m.params.size())
        throw argument_error("likelihood: class " + std::to_string(q) + " out of range");
    const auto& p = m.params[q - 1];
    if (m.kind == NoiseKind::gaussian) {
        const double mu = p.a, sigma = p.b;
        const double d = (x - mu) / sigma;
        return std::exp(-0.5 * d * d) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    }
    const double lambda = p.a, k = p.b;
    if (x <= 0.0) return 0.0; // Weibull support is x > 0
    const double r = x / lambda;
    return (k / lambda) * std::pow(r, k - 1.0) * std::exp(-std::pow(r, k));
}

namespace detail {

struct WeibullSums {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0; // sum w, sum w*lnx, sum w*lnx^2 with w = (x/xmax)^k
};

inline WeibullSums weibull_sums(const std::vector<double>& x, const std::vector<double>& lnx, double ln_xmax,
                                double k) {
    WeibullSums s;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = std::exp(k * (lnx[i] - ln_xmax)); // (x/xmax)^k, overflow-safe
        s.s0 += w;
        s.s1 += w * lnx[i];
        s.s2 += w * lnx[i] * lnx[i];
    }
    return s;
}

/// Residual of the Weibull shape equation: sum x^k ln x / sum x^k - 1/k - mean(ln x).
inline double weibull_residual(const WeibullSums& s, double k, double mean_ln) {
    return s.s1 / s.s0 - 1.0 / k - mean_ln;
}

inline double weibull_scale(const WeibullSums& s, double ln_xmax, double k, std::size_t n) {
    // lambda = (sum x^k / n)^(1/k), evaluated in scaled form
    return std::exp(ln_xmax + std::log(s.s0 / static_cast<double>(n)) / k);
}

/// Profile log-likelihood in k (lambda eliminated at its optimum).
inline double weibull_profile_ll(const std::vector<double>& x, const std::vector<double>& lnx, double ln_xmax,
                                 double k, double sum_ln) {
    const auto s = weibull_sums(x, lnx, ln_xmax, k);
    const double n = static_cast<double>(x.size());
    const double ln_lambda = ln_xmax + std::log(s.s0 / n) / k;
    return n * std::log(k) - n * k * ln_lambda + (k - 1.0) * sum_ln - n;
}

/// Golden-section maximization of the profile log-likelihood on [0.05, 50].
inline double weibull_golden_k(const std::vector<double>& x, const std::vector<double>& lnx, double ln_xmax,
                               double sum_ln) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.05, b = 50.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = weibull_profile_ll(x, lnx, ln_xmax, c, sum_ln);
    double fd = weibull_profile_ll(x, lnx, ln_xmax, d, sum_ln);
    while (b - a > 1e-10) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = weibull_profile_ll(x, lnx, ln_xmax, c, sum_ln);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = weibull_profile_ll(x, lnx, ln_xmax, d, sum_ln);
        }
    }
    return 0.5 * (a + b);
}

struct WeibullFit {
    double lambda, k;
    double residual;     // shape-equation residual at the returned k
    bool used_fallback;  // Newton failed, golden-section result
};

inline WeibullFit fit_weibull(std::vector<double> data) {
    // Weibull support is x > 0; zero intensities are moved to 0.5.
    for (double& v : data)
        if (v <= 0.0) v = 0.5;

    const std::size_t n = data.size();
    std::vector<double> lnx(n);
    double sum_ln = 0.0, xmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        lnx[i] = std::log(data[i]);
        sum_ln += lnx[i];
        xmax = std::max(xmax, data[i]);
    }
    const double mean_ln = sum_ln / static_cast<double>(n);
    const double ln_xmax = std::log(xmax);

    // Newton on the shape residual, k0 = 1.
    double k = 1.0;
    bool converged = false;
    for (int it = 0; it < 200; ++it) {
        const auto s = weibull_sums(data, lnx, ln_xmax, k);
        const double f = weibull_residual(s, k, mean_ln);
        if (std::abs(f) <= 1e-8) {
            converged = true;
            break;
        }
        const double var = (s.s0 * s.s2 - s.s1 * s.s1) / (s.s0 * s.s0); // weighted variance of ln x
        const double fp = var + 1.0 / (k * k);
        const double next = k - f / fp;
        if (!std::isfinite(next) || next <= 1e-6 || next > 1e3) break; // diverging
        k = next;
    }

    WeibullFit fit{};
    fit.used_fallback = !converged;
    if (!converged) k = weibull_golden_k(data, lnx, ln_xmax, sum_ln);
    const auto s = weibull_sums(data, lnx, ln_xmax, k);
    fit.k = k;
    fit.lambda = weibull_scale(s, ln_xmax, k, n);
    fit.residual = weibull_residual(s, k, mean_ln);
    return fit;
}

} // namespace detail

/// Refit the parameters of class q (1-based) from the given intensities.
inline void mle_update(NoiseModel& m, const std::vector<double>& data, std::size_t q) {
    if (q == 0 || q > m.params.size())
        throw argument_error("mle_update: class " + std::to_string(q) + " out of range");
    if (data.empty()) throw argument_error("mle_update: empty data for class " + std::to_string(q));

    if (m.kind == NoiseKind::gaussian) {
        double mean = 0.0;
        for (double v : data) mean += v;
        mean /= static_cast<double>(data.size());
        double ss = 0.0;
        for (double v : data) ss += (v - mean) * (v - mean);
        const double sigma = std::sqrt(ss / static_cast<double>(data.size())); // population std
        m.params[q - 1] = {mean, std::max(sigma, kSigmaFloor)};
    } else {
        const auto fit = detail::fit_weibull(data);
        m.params[q - 1] = {fit.lambda, fit.k};
    }
}

/// N x Q row-major table of -log(max(p(x_i | q), floor)).
inline std::vector<double> neg_log_likelihood_table(const NoiseModel& m, const std::vector<std::uint8_t>& pixels) {
    m.validate();
    const std::size_t Q = m.n_classes();
    std::vector<double> t(pixels.size() * Q);
    for (std::size_t i = 0; i < pixels.size(); ++i)
        for (std::size_t q = 1; q <= Q; ++q)
            t[i * Q + (q - 1)] = -std::log(std::max(likelihood(m, pixels[i], q), kProbFloor));
    return t;
}

inline nlohmann::json to_json(const NoiseModel& m) {
    nlohmann::json j;
    j["kind"] = to_string(m.kind);
    j["params"] = nlohmann::json::array();
    for (const auto& p : m.params) {
        if (m.kind == NoiseKind::gaussian)
            j["params"].push_back({{"mu", p.a}, {"sigma", p.b}});
        else
            j["params"].push_back({{"lambda", p.a}, {"k", p.b}});
    }
    return j;
}

inline NoiseModel noise_model_from_json(const nlohmann::json& j) {
    NoiseModel m;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "gaussian")
            m.kind = NoiseKind::gaussian;
        else if (kind == "weibull")
            m.kind = NoiseKind::weibull;
        else
            throw parse_error("noise model: unknown kind '" + kind + "'");
        for (const auto& e : j.at("params")) {
            NoiseModel::ClassParams p{};
            if (m.kind == NoiseKind::gaussian) {
                p.a = e.at("mu").get<double>();
                p.b = e.at("sigma").get<double>();
            } else {
                p.a = e.at("lambda").get<double>();
                p.b = e.at("k").get<double>();
            }
            m.params.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("noise model json: ") + e.what());
    }
    try {
        m.validate();
    } catch (const argument_error& e) {
        throw parse_error(std::string("noise model json: ") + e.what());
    }
    return m;
}

} // namespace qseg
